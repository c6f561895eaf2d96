//! Scalar abstraction: the numeric core is generic over the floating-point
//! type so the same code runs in f32 (training speed) and f64 (verification).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar usable everywhere in the numeric core.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossless-enough conversion from f64 (value construction).
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }

    /// Widening conversion to f64 (reporting, checkpoints).
    fn to_f64_c(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Convert a slice of f64 into the working scalar type.
pub fn cast_slice<T: Scalar>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::from_f64_c(x)).collect()
}

/// Convert a slice of the working scalar type into f64.
pub fn widen_slice<T: Scalar>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|&x| x.to_f64_c()).collect()
}
