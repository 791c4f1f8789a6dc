//! Floating-point scalar abstraction shared by the numeric core.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Real scalar used by parameters, activations and gradients: `f32` or `f64`.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + core::ops::AddAssign
    + core::ops::SubAssign
    + core::ops::MulAssign
    + core::ops::DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Tag written into checkpoints so a file is only loaded at the precision it was saved with.
    const NAME: &'static str;

    /// Converts an `f64` literal or statistic into this scalar.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).expect("f64 is representable")
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("float widens to f64")
    }

    /// Smallest probability mass allowed inside a Bernoulli log.
    ///
    /// `1e-12` at double precision. At single precision `1 - 1e-12` rounds to one,
    /// so the floor is raised to the type's epsilon.
    #[inline]
    fn prob_floor() -> Self {
        let floor = Self::lit(1e-12);
        if floor < Self::epsilon() {
            Self::epsilon()
        } else {
            floor
        }
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prob_floor_keeps_complement_below_one() {
        let f = f32::prob_floor();
        assert!(1.0f32 - f < 1.0);
        assert_eq!(f64::prob_floor(), 1e-12);
        assert!(1.0f64 - f64::prob_floor() < 1.0);
    }
}
