//! Floating-point abstraction shared by the geometric and learning kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Real scalar usable by the frame codec and the quantizer network.
///
/// Implemented for [`f32`] and [`f64`]. The crate-root aliases pin `f64`,
/// which is what every tolerance in the test-suite assumes.
pub trait Scalar:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::FromPrimitive
    + ndarray::NdFloat
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless for `f64`, rounding for `f32`.
    fn of(x: f64) -> Self;

    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}
