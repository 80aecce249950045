//! Segment maps: ingestion of precomputed superpixel/supervoxel labelings
//! and two simple built-in segmenters for synthetic data.
//!
//! A [`SegmentMap`] assigns every pixel of every frame a segment id. With
//! per-frame scope, equal ids only group pixels within one frame; with
//! cross-frame scope, equal ids across frames denote one supervoxel.
//! [`cliques_from_map`] turns a map into Pn-Potts cliques.

use crate::hoc::{CliqueSet, CliqueSource, PnPottsParams};
use crate::model::VideoVolume;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Whether segment ids group pixels per frame or across frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentScope {
    PerFrame,
    CrossFrame,
}

/// Per-pixel segment ids over a frame range.
#[derive(Debug, Clone)]
pub struct SegmentMap {
    frames: usize,
    width: usize,
    height: usize,
    ids: Vec<u32>,
    scope: SegmentScope,
}

impl SegmentMap {
    pub fn new(
        frames: usize,
        width: usize,
        height: usize,
        ids: Vec<u32>,
        scope: SegmentScope,
    ) -> Result<Self> {
        if frames == 0 || width == 0 || height == 0 {
            return Err(Error::Empty { what: "segment map" });
        }
        if ids.len() != frames * width * height {
            return Err(Error::ShapeMismatch {
                expected: frames * width * height,
                actual: ids.len(),
            });
        }
        Ok(Self {
            frames,
            width,
            height,
            ids,
            scope,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn scope(&self) -> SegmentScope {
        self.scope
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Repeats a single-frame map across `frames` frames (per-frame scope).
    pub fn repeated(&self, frames: usize) -> Result<SegmentMap> {
        if self.frames != 1 {
            return Err(Error::InvalidParameter {
                name: "frames",
                reason: "only single-frame maps can be repeated".into(),
            });
        }
        let mut ids = Vec::with_capacity(frames * self.ids.len());
        for _ in 0..frames {
            ids.extend_from_slice(&self.ids);
        }
        SegmentMap::new(frames, self.width, self.height, ids, SegmentScope::PerFrame)
    }
}

/// Builds Pn-Potts cliques from a segment map.
///
/// Per-frame scope yields one clique per (frame, id) pair, tagged as a
/// superpixel of `layer`. Cross-frame scope yields one clique per id
/// spanning its frames, unless `supervoxel_slices` degrades supervoxels to
/// their per-frame slices. Ids need not be contiguous; singleton cliques
/// are retained.
pub fn cliques_from_map<T: Scalar>(
    map: &SegmentMap,
    params: &PnPottsParams<T>,
    layer: u32,
    supervoxel_slices: bool,
) -> Result<CliqueSet<T>> {
    let np = map.width * map.height;
    let mut set = CliqueSet::empty(params.clone());
    let per_frame_slices = map.scope == SegmentScope::PerFrame || supervoxel_slices;
    if per_frame_slices {
        for f in 0..map.frames {
            let mut groups: std::collections::BTreeMap<u32, Vec<u32>> =
                std::collections::BTreeMap::new();
            for p in 0..np {
                let var = (f * np + p) as u32;
                groups.entry(map.ids[f * np + p]).or_default().push(var);
            }
            let source = match map.scope {
                SegmentScope::PerFrame => CliqueSource::Superpixel { layer },
                SegmentScope::CrossFrame => CliqueSource::SupervoxelSlice,
            };
            for (_, members) in groups {
                set.push(members, source)?;
            }
        }
    } else {
        let mut groups: std::collections::BTreeMap<u32, Vec<u32>> =
            std::collections::BTreeMap::new();
        for (i, &id) in map.ids.iter().enumerate() {
            groups.entry(id).or_default().push(i as u32);
        }
        for (_, members) in groups {
            set.push(members, CliqueSource::Supervoxel)?;
        }
    }
    Ok(set)
}

/// Regular tiling of one frame into `cell` x `cell` blocks (partial blocks
/// at the right/bottom borders), ids in row-major block order.
pub fn grid_segments(width: usize, height: usize, cell: usize) -> Result<SegmentMap> {
    if cell == 0 {
        return Err(Error::InvalidParameter {
            name: "cell",
            reason: "must be at least 1".into(),
        });
    }
    let cells_x = width.div_ceil(cell);
    let mut ids = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            ids.push(((y / cell) * cells_x + x / cell) as u32);
        }
    }
    SegmentMap::new(1, width, height, ids, SegmentScope::PerFrame)
}

/// Lloyd iterations over (x, y, r, g, b) with deterministic seeding; the
/// iteration count is capped and assignment ties break toward the lower
/// center index, so a fixed seed reproduces the map exactly.
const KMEANS_CAP: usize = 20;

fn pixel_features(volume: &VideoVolume, frame: usize) -> Vec<[f64; 5]> {
    let np = volume.frame_pixels();
    (0..np)
        .map(|p| {
            let var = frame * np + p;
            let (_, x, y) = volume.coords(var);
            let [r, g, b] = volume.rgb(var);
            [x as f64, y as f64, r as f64, g as f64, b as f64]
        })
        .collect()
}

fn dist2(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn assign_best(feats: &[[f64; 5]], centers: &[[f64; 5]], assign: &mut [u32], stride: usize) -> bool {
    let mut changed = false;
    for p in (0..feats.len()).step_by(stride) {
        let f = &feats[p];
        let mut best = 0usize;
        let mut best_d = dist2(f, &centers[0]);
        for (c, center) in centers.iter().enumerate().skip(1) {
            let d = dist2(f, center);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        if assign[p] != best as u32 {
            assign[p] = best as u32;
            changed = true;
        }
    }
    changed
}

fn lloyd(
    feats: &[[f64; 5]],
    centers: &mut [[f64; 5]],
    assign: &mut [u32],
    max_iters: usize,
) {
    let k = centers.len();
    // Center updates run on a strided subsample of the pixels; the final
    // assignment pass below covers every pixel exactly. Keeps large frames
    // tractable without losing determinism.
    let stride = (feats.len() / 4096).clamp(1, 16);
    for _ in 0..max_iters {
        let changed = assign_best(feats, centers, assign, stride);
        let mut sums = vec![[0.0f64; 5]; k];
        let mut counts = vec![0usize; k];
        for p in (0..feats.len()).step_by(stride) {
            let c = assign[p] as usize;
            counts[c] += 1;
            for i in 0..5 {
                sums[c][i] += feats[p][i];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for i in 0..5 {
                    centers[c][i] = sums[c][i] / counts[c] as f64;
                }
            }
            // Empty clusters keep their center.
        }
        if !changed {
            break;
        }
    }
    assign_best(feats, centers, assign, 1);
}

/// K-means superpixels of one frame over (x, y, r, g, b).
pub fn kmeans_color_segments(
    volume: &VideoVolume,
    frame: usize,
    k: usize,
    seed: u64,
) -> Result<SegmentMap> {
    let np = volume.frame_pixels();
    if k == 0 {
        return Err(Error::InvalidParameter {
            name: "k",
            reason: "must be at least 1".into(),
        });
    }
    if k > np {
        return Err(Error::InvalidParameter {
            name: "k",
            reason: format!("{k} clusters exceed {np} pixels"),
        });
    }
    let feats = pixel_features(volume, frame);
    let mut rng = SplitMix64::new(seed);
    let mut centers: Vec<[f64; 5]> = (0..k)
        .map(|_| feats[rng.next_below(np as u64) as usize])
        .collect();
    let mut assign = vec![0u32; np];
    lloyd(&feats, &mut centers, &mut assign, KMEANS_CAP);
    SegmentMap::new(
        1,
        volume.width(),
        volume.height(),
        assign,
        SegmentScope::PerFrame,
    )
}

/// K-means supervoxels: frame 0 is clustered from scratch, every following
/// frame warm-starts from the previous frame's centers so cluster ids track
/// coherent regions through time. Equal ids across frames denote one
/// supervoxel (cross-frame scope).
pub fn kmeans_supervoxels(volume: &VideoVolume, k: usize, seed: u64) -> Result<SegmentMap> {
    let np = volume.frame_pixels();
    if k == 0 {
        return Err(Error::InvalidParameter {
            name: "k",
            reason: "must be at least 1".into(),
        });
    }
    if k > np {
        return Err(Error::InvalidParameter {
            name: "k",
            reason: format!("{k} clusters exceed {np} pixels per frame"),
        });
    }
    let mut rng = SplitMix64::new(seed);
    let mut ids = Vec::with_capacity(volume.variable_count());
    let mut centers: Vec<[f64; 5]> = Vec::new();
    for frame in 0..volume.frames() {
        let feats = pixel_features(volume, frame);
        let mut assign = vec![0u32; np];
        if frame == 0 {
            centers = (0..k)
                .map(|_| feats[rng.next_below(np as u64) as usize])
                .collect();
            lloyd(&feats, &mut centers, &mut assign, KMEANS_CAP);
        } else {
            lloyd(&feats, &mut centers, &mut assign, KMEANS_CAP / 4);
        }
        ids.extend_from_slice(&assign);
    }
    SegmentMap::new(
        volume.frames(),
        volume.width(),
        volume.height(),
        ids,
        SegmentScope::CrossFrame,
    )
}
