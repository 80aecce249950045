//! Scalar abstraction: the engine stores fields in `f32` or `f64`.

use std::fmt;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point storage scalar for features, values and marginals.
///
/// Regardless of the storage type, every summation that can grow with the
/// input size is accumulated in `f64`; `Scalar` only governs what is kept in
/// memory.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Widen to `f64` (exact for `f32` and `f64`).
    #[inline]
    fn wide(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Narrow from `f64`, rounding to nearest.
    #[inline]
    fn narrow(value: f64) -> Self {
        Self::from_f64(value).expect("scalar converts from f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
