//! Bit-exact readers and writers for the engine's file formats.
//!
//! * PPM (`P6`, maxval 255): input frames and colorized outputs.
//! * PGM (`P5`, maxval 255): label maps, one file per frame; the value 255
//!   is reserved for void/ignore in ground truth.
//! * `UNR1`, per-frame unary cost volumes: magic `UNR1`, then width,
//!   height, labels as little-endian u32, then `W*H*L` little-endian f32
//!   costs, pixel-major (row-major), label-minor.
//! * `SEG1`, segment maps: magic `SEG1`, then width, height, frames as
//!   little-endian u32, one scope byte (0 per-frame, 1 cross-frame), then
//!   `F*W*H` little-endian u32 ids.
//! * Palette: plain text, one `id,r,g,b,name` line per label, `#` comments.
//!
//! Every reader rejects size mismatches instead of truncating or extending,
//! and every writer emits canonical bytes so write-then-read is the
//! identity.

use std::fs;
use std::path::{Path, PathBuf};

use crate::model::UnaryField;
use crate::scalar::Scalar;
use crate::segments::{SegmentMap, SegmentScope};
use crate::{Error, Label, Result, VOID_LABEL};

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(path, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// PNM header scanner: skips whitespace and `#` comments, returns the next
/// ASCII integer token.
struct PnmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> PnmHeader<'a> {
    fn new(bytes: &'a [u8], pos: usize, path: &'a Path) -> Self {
        Self { bytes, pos, path }
    }

    fn next_int(&mut self) -> Result<u32> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(b) if b.is_ascii_digit() => break,
                other => {
                    return Err(Error::BadHeader {
                        path: self.path.into(),
                        reason: format!("expected integer, found {other:?}"),
                    })
                }
            }
        }
        let mut value: u64 = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value * 10 + (b - b'0') as u64;
            if value > u32::MAX as u64 {
                return Err(Error::BadHeader {
                    path: self.path.into(),
                    reason: "header value overflows u32".into(),
                });
            }
            self.pos += 1;
        }
        Ok(value as u32)
    }

    /// Consumes exactly one whitespace byte separating header and payload.
    fn payload(mut self) -> Result<&'a [u8]> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => self.pos += 1,
            other => {
                return Err(Error::BadHeader {
                    path: self.path.into(),
                    reason: format!("expected whitespace before payload, found {other:?}"),
                })
            }
        }
        Ok(&self.bytes[self.pos..])
    }
}

fn check_magic(path: &Path, bytes: &[u8], expected: &[u8]) -> Result<()> {
    let found = bytes.get(..expected.len()).unwrap_or(bytes);
    if found != expected {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: String::from_utf8_lossy(expected).into_owned(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    Ok(())
}

/// Loads one binary PPM (`P6`, maxval 255) frame.
pub fn load_image(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<[u8; 3]>)> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    check_magic(path, &bytes, b"P6")?;
    let mut header = PnmHeader::new(&bytes, 2, path);
    let width = header.next_int()? as usize;
    let height = header.next_int()? as usize;
    let maxval = header.next_int()?;
    if maxval != 255 {
        return Err(Error::BadMaxval {
            path: path.into(),
            maxval,
        });
    }
    let payload = header.payload()?;
    let expected = width * height * 3;
    if payload.len() != expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            actual: payload.len(),
        });
    }
    let rgb = payload
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Ok((width, height, rgb))
}

/// Writes one binary PPM (`P6`) frame with canonical header bytes.
pub fn save_image(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    rgb: &[[u8; 3]],
) -> Result<()> {
    let path = path.as_ref();
    if rgb.len() != width * height {
        return Err(Error::ShapeMismatch {
            expected: width * height,
            actual: rgb.len(),
        });
    }
    let mut bytes = format!("P6\n{width} {height}\n255\n").into_bytes();
    bytes.reserve(rgb.len() * 3);
    for px in rgb {
        bytes.extend_from_slice(px);
    }
    write_file(path, &bytes)
}

/// Loads one binary PGM (`P5`, maxval 255) label map. Values must be below
/// `labels` or equal to the void label 255.
pub fn load_labelmap(
    path: impl AsRef<Path>,
    labels: usize,
) -> Result<(usize, usize, Vec<Label>)> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    check_magic(path, &bytes, b"P5")?;
    let mut header = PnmHeader::new(&bytes, 2, path);
    let width = header.next_int()? as usize;
    let height = header.next_int()? as usize;
    let maxval = header.next_int()?;
    if maxval != 255 {
        return Err(Error::BadMaxval {
            path: path.into(),
            maxval,
        });
    }
    let payload = header.payload()?;
    let expected = width * height;
    if payload.len() != expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            actual: payload.len(),
        });
    }
    for (pixel, &v) in payload.iter().enumerate() {
        if v != VOID_LABEL && v as usize >= labels {
            return Err(Error::BadLabelValue {
                path: path.into(),
                pixel,
                label: v as usize,
                labels,
            });
        }
    }
    Ok((width, height, payload.to_vec()))
}

/// Writes one binary PGM (`P5`) label map.
pub fn save_labelmap(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    labeling: &[Label],
) -> Result<()> {
    let path = path.as_ref();
    if labeling.len() != width * height {
        return Err(Error::ShapeMismatch {
            expected: width * height,
            actual: labeling.len(),
        });
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(labeling);
    write_file(path, &bytes)
}

/// Loads one `UNR1` unary frame. With `costs_are_probs`, stored values are
/// interpreted as probabilities and converted to costs by
/// `-ln(max(p, 1e-12))`.
pub fn load_unary<T: Scalar>(
    path: impl AsRef<Path>,
    costs_are_probs: bool,
) -> Result<UnaryField<T>> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    check_magic(path, &bytes, b"UNR1")?;
    if bytes.len() < 16 {
        return Err(Error::Truncated {
            path: path.into(),
            expected: 16,
            actual: bytes.len(),
        });
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let width = u32_at(4) as usize;
    let height = u32_at(8) as usize;
    let labels = u32_at(12) as usize;
    let count = width * height * labels;
    let expected = 16 + count * 4;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            actual: bytes.len(),
        });
    }
    let mut costs = Vec::with_capacity(count);
    for i in 0..count {
        let off = 16 + i * 4;
        let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFiniteCost {
                path: path.into(),
                pixel: i / labels,
                label: i % labels,
            });
        }
        let cost = if costs_are_probs {
            -(v as f64).max(1e-12).ln()
        } else {
            v as f64
        };
        costs.push(T::narrow(cost));
    }
    UnaryField::new(1, width, height, labels, costs)
}

/// Writes one `UNR1` unary frame (costs serialized as f32).
pub fn save_unary<T: Scalar>(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    labels: usize,
    costs: &[T],
) -> Result<()> {
    let path = path.as_ref();
    if costs.len() != width * height * labels {
        return Err(Error::ShapeMismatch {
            expected: width * height * labels,
            actual: costs.len(),
        });
    }
    let mut bytes = Vec::with_capacity(16 + costs.len() * 4);
    bytes.extend_from_slice(b"UNR1");
    bytes.extend_from_slice(&(width as u32).to_le_bytes());
    bytes.extend_from_slice(&(height as u32).to_le_bytes());
    bytes.extend_from_slice(&(labels as u32).to_le_bytes());
    for c in costs {
        bytes.extend_from_slice(&(c.wide() as f32).to_le_bytes());
    }
    write_file(path, &bytes)
}

/// Loads a `SEG1` segment map (all frames of one layer).
pub fn load_segments(path: impl AsRef<Path>) -> Result<SegmentMap> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    check_magic(path, &bytes, b"SEG1")?;
    if bytes.len() < 17 {
        return Err(Error::Truncated {
            path: path.into(),
            expected: 17,
            actual: bytes.len(),
        });
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let width = u32_at(4) as usize;
    let height = u32_at(8) as usize;
    let frames = u32_at(12) as usize;
    let scope = match bytes[16] {
        0 => SegmentScope::PerFrame,
        1 => SegmentScope::CrossFrame,
        other => {
            return Err(Error::BadHeader {
                path: path.into(),
                reason: format!("scope byte must be 0 or 1, found {other}"),
            })
        }
    };
    let count = frames * width * height;
    let expected = 17 + count * 4;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            actual: bytes.len(),
        });
    }
    let ids = (0..count)
        .map(|i| u32_at(17 + i * 4))
        .collect();
    SegmentMap::new(frames, width, height, ids, scope)
}

/// Writes a `SEG1` segment map.
pub fn save_segments(path: impl AsRef<Path>, map: &SegmentMap) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(17 + map.ids().len() * 4);
    bytes.extend_from_slice(b"SEG1");
    bytes.extend_from_slice(&(map.width() as u32).to_le_bytes());
    bytes.extend_from_slice(&(map.height() as u32).to_le_bytes());
    bytes.extend_from_slice(&(map.frames() as u32).to_le_bytes());
    bytes.push(match map.scope() {
        SegmentScope::PerFrame => 0,
        SegmentScope::CrossFrame => 1,
    });
    for &id in map.ids() {
        bytes.extend_from_slice(&id.to_le_bytes());
    }
    write_file(path, &bytes)
}

/// One palette entry: label id, display color, class name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaletteEntry {
    pub id: Label,
    pub rgb: [u8; 3],
    pub name: String,
}

/// Label palette for colorized outputs.
#[derive(Debug, Clone, Default)]
pub struct Palette {
    entries: Vec<PaletteEntry>,
}

impl Palette {
    pub fn new(entries: Vec<PaletteEntry>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.id) {
                return Err(Error::InvalidParameter {
                    name: "palette",
                    reason: format!("duplicate label id {}", e.id),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[PaletteEntry] {
        &self.entries
    }

    pub fn color(&self, label: Label) -> Option<[u8; 3]> {
        self.entries.iter().find(|e| e.id == label).map(|e| e.rgb)
    }

    /// Inverse lookup, used to decode colorized images back to labels.
    pub fn label_of_color(&self, rgb: [u8; 3]) -> Option<Label> {
        self.entries.iter().find(|e| e.rgb == rgb).map(|e| e.id)
    }
}

/// Loads a palette: one `id,r,g,b,name` line per label, `#` comments and
/// blank lines ignored.
pub fn load_palette(path: impl AsRef<Path>) -> Result<Palette> {
    let path = path.as_ref();
    let text = String::from_utf8_lossy(&read_file(path)?).into_owned();
    let mut entries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(5, ',');
        let mut field = |what: &str| -> Result<&str> {
            parts.next().map(str::trim).ok_or_else(|| Error::BadPaletteLine {
                path: path.into(),
                line: lineno + 1,
                reason: format!("missing {what}"),
            })
        };
        let parse_u8 = |s: &str, what: &str| -> Result<u8> {
            s.parse::<u8>().map_err(|_| Error::BadPaletteLine {
                path: path.into(),
                line: lineno + 1,
                reason: format!("bad {what}: {s:?}"),
            })
        };
        let id = parse_u8(field("id")?, "id")?;
        let r = parse_u8(field("r")?, "r")?;
        let g = parse_u8(field("g")?, "g")?;
        let b = parse_u8(field("b")?, "b")?;
        let name = field("name")?.to_string();
        entries.push(PaletteEntry {
            id,
            rgb: [r, g, b],
            name,
        });
    }
    Palette::new(entries)
}

/// Writes a palette in the same text format `load_palette` reads.
pub fn save_palette(path: impl AsRef<Path>, palette: &Palette) -> Result<()> {
    let mut text = String::from("# id,r,g,b,name\n");
    for e in palette.entries() {
        text.push_str(&format!("{},{},{},{},{}\n", e.id, e.rgb[0], e.rgb[1], e.rgb[2], e.name));
    }
    write_file(path.as_ref(), text.as_bytes())
}

/// Writes a labeling as a P6 image through the palette; the void label 255
/// maps to black. Every other label must have a palette entry.
pub fn save_colorized(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    labeling: &[Label],
    palette: &Palette,
) -> Result<()> {
    let path = path.as_ref();
    if labeling.len() != width * height {
        return Err(Error::ShapeMismatch {
            expected: width * height,
            actual: labeling.len(),
        });
    }
    let mut rgb = Vec::with_capacity(labeling.len());
    for &l in labeling {
        let color = if l == VOID_LABEL {
            [0, 0, 0]
        } else {
            palette
                .color(l)
                .ok_or(Error::MissingPaletteEntry { label: l as usize })?
        };
        rgb.push(color);
    }
    save_image(path, width, height, &rgb)
}

/// Files with the given extension in a directory, sorted by file name; the
/// frame order of every multi-frame input.
pub fn sorted_files(dir: impl AsRef<Path>, extension: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|e| e.eq_ignore_ascii_case(extension))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    Ok(files)
}
