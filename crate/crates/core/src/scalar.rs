use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar the whole engine is generic over: f32 or f64.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
}

/// Lossless for every count this engine produces (f64 holds integers up to 2^53).
pub fn from_usize<T: Scalar>(n: usize) -> T {
    T::from_usize(n).expect("sample count representable as scalar")
}

pub fn from_f64<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 representable as scalar")
}
