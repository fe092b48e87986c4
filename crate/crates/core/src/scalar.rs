//! Numeric traits the rest of the crate is generic over.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// Anything that can hold a probability mass: floats, but also exact
/// rationals when only counting and normalization are needed.
pub trait Probability: Num + Clone + PartialOrd + ToPrimitive + Debug {
    /// Allowed absolute deviation of a probability vector's sum from one.
    fn normalization_tolerance() -> f64;

    fn from_count(n: usize) -> Self;
}

impl Probability for f64 {
    fn normalization_tolerance() -> f64 {
        NORMALIZATION_TOLERANCE
    }

    fn from_count(n: usize) -> Self {
        n as f64
    }
}

impl Probability for f32 {
    fn normalization_tolerance() -> f64 {
        1e-5
    }

    fn from_count(n: usize) -> Self {
        n as f32
    }
}

macro_rules! exact_probability {
    ($($int:ty),*) => {$(
        impl Probability for Ratio<$int> {
            fn normalization_tolerance() -> f64 {
                0.0
            }

            fn from_count(n: usize) -> Self {
                Ratio::from_integer(n as $int)
            }
        }
    )*};
}

exact_probability!(i32, i64, i128);

/// Floating point scalar used for fusion, metrics and standardization (f32 or f64).
pub trait Scalar:
    Probability
    + Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Tolerance used when checking that a probability vector sums to one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Default additive smoothing applied before any division or logarithm.
pub const DEFAULT_EPSILON: f64 = 1e-6;
