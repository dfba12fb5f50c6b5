//! Scalar abstraction: the whole crate is generic over the floating-point
//! type through this single trait.

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable everywhere in the crate: `f32` or `f64`.
///
/// `nalgebra::RealField` supplies the transcendental functions and linear
/// algebra support; the num-traits bounds supply lossless-enough conversions
/// from literals and counts.
pub trait Scalar:
    nalgebra::RealField + Copy + Default + FromPrimitive + ToPrimitive + std::iter::Sum + 'static
{
    /// Convert an `f64` constant. Panics only if the target type cannot
    /// represent any finite value of the argument's magnitude, which does not
    /// happen for the constants used in this crate.
    #[inline]
    fn from_f64_c(value: f64) -> Self {
        <Self as FromPrimitive>::from_f64(value).expect("constant representable in scalar type")
    }

    /// Convert a count.
    #[inline]
    fn from_usize_c(value: usize) -> Self {
        <Self as FromPrimitive>::from_usize(value).expect("count representable in scalar type")
    }

    #[inline]
    fn to_f64_c(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl<T> Scalar for T where
    T: nalgebra::RealField
        + Copy
        + Default
        + FromPrimitive
        + ToPrimitive
        + std::iter::Sum
        + 'static
{
}
