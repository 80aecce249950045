use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the engine. Every variant names the offending input
/// precisely enough to locate it (point index, pixel/label, file, flag).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite feature entry at point {point}, component {component}")]
    NonFiniteFeature { point: usize, component: usize },

    #[error("non-finite value entry at point {point}, channel {channel}")]
    NonFiniteValue { point: usize, channel: usize },

    #[error("matrix shape mismatch: expected {expected} entries, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("point count mismatch: lattice holds {expected} points, values hold {actual}")]
    CountMismatch { expected: usize, actual: usize },

    #[error("empty input: {what}")]
    Empty { what: &'static str },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch between {left} and {right}: {detail}")]
    DimensionMismatch {
        left: &'static str,
        right: &'static str,
        detail: String,
    },

    #[error("label {label} out of range for {labels} labels at variable {variable}")]
    LabelOutOfRange {
        label: usize,
        labels: usize,
        variable: usize,
    },

    #[error("instance too large for the exact path: {count} variables exceed the guard of {guard}")]
    SizeGuard { count: usize, guard: usize },

    #[error("clique is empty")]
    EmptyClique,

    #[error("variable {variable} is not a member of the clique")]
    NotCliqueMember { variable: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic, expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("{path}: truncated payload, expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("{path}: unsupported maxval {maxval} (only 255 is accepted)")]
    BadMaxval { path: PathBuf, maxval: u32 },

    #[error("{path}: malformed header: {reason}")]
    BadHeader { path: PathBuf, reason: String },

    #[error("{path}: non-finite cost at pixel {pixel}, label {label}")]
    NonFiniteCost {
        path: PathBuf,
        pixel: usize,
        label: usize,
    },

    #[error("{path}: label value {label} at pixel {pixel} exceeds {labels} labels (255 is void)")]
    BadLabelValue {
        path: PathBuf,
        pixel: usize,
        label: usize,
        labels: usize,
    },

    #[error("palette has no entry for label {label}")]
    MissingPaletteEntry { label: usize },

    #[error("{path}: malformed palette line {line}: {reason}")]
    BadPaletteLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("labeling length mismatch: prediction has {pred} entries, ground truth {gt}")]
    LengthMismatch { pred: usize, gt: usize },

    #[error("no class has any ground-truth pixel; metrics undefined")]
    NoEvaluatedPixels,

    #[error("frame sets do not match: {detail}")]
    FrameSetMismatch { detail: String },

    #[error("invalid flag --{flag}: {reason}")]
    BadFlag { flag: String, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
