//! Batch inference engine for semantic video segmentation.
//!
//! The engine performs mean-field inference in a dense CRF defined jointly
//! over a window of video frames ("co-labeling"), so that every pixel of
//! every frame in the window is pairwise-connected through Gaussian kernels.
//! The quadratic message passing is made tractable by approximate Gaussian
//! filtering on a permutohedral lattice, and segment-level label consistency
//! is encouraged by Pn-Potts potentials over superpixels and supervoxel
//! slices.
//!
//! Module map:
//! - [`lattice`]: permutohedral Gaussian filtering plus an exact brute-force
//!   oracle for verification.
//! - [`model`]: the random field itself: unaries, kernels, compatibility,
//!   exact energies.
//! - [`solver`]: filter-based parallel mean-field updates, an exact
//!   sequential coordinate oracle, free energy, decoding.
//! - [`hoc`]: Pn-Potts higher-order clique potentials.
//! - [`segments`]: segment-map ingestion and simple built-in segmenters.
//! - [`io`]: bit-exact readers/writers (PPM/PGM/UNR1/SEG1/palette).
//! - [`eval`]: confusion matrices and average per-class accuracy.
//! - [`synth`]: deterministic synthetic scenes for desk-scale experiments.
//! - [`cli`]: the `vidcrf` command-line surface.
//!
//! All numeric containers are generic over the scalar type via
//! [`scalar::Scalar`] (`f32` or `f64`); accumulation happens in `f64`
//! regardless of the storage type. Concrete aliases for both precisions are
//! exported at the crate root.

pub mod cli;
pub mod eval;
pub mod hoc;
pub mod io;
pub mod lattice;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod segments;
pub mod solver;
pub mod synth;

mod error;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision production aliases.
pub type FeatureMatrix32 = lattice::FeatureMatrix<f32>;
pub type ValueMatrix32 = lattice::ValueMatrix<f32>;
pub type Lattice32 = lattice::PermutohedralLattice<f32>;
pub type UnaryField32 = model::UnaryField<f32>;
pub type CrfProblem32 = model::CrfProblem<f32>;
pub type MarginalField32 = solver::MarginalField<f32>;



/// Double-precision aliases, used by the oracle and verification paths.
pub type FeatureMatrix64 = lattice::FeatureMatrix<f64>;
pub type ValueMatrix64 = lattice::ValueMatrix<f64>;
pub type Lattice64 = lattice::PermutohedralLattice<f64>;
pub type UnaryField64 = model::UnaryField<f64>;
pub type CrfProblem64 = model::CrfProblem<f64>;
pub type MarginalField64 = solver::MarginalField<f64>;



/// Label id assigned to a pixel. The value 255 is reserved for void/ignore
/// in ground-truth maps and never appears in decoded labelings.
pub type Label = u8;

/// Reserved void/ignore label in ground-truth and label-map files.
pub const VOID_LABEL: Label = 255;
