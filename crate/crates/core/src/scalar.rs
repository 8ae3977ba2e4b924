//! Floating-point scalar abstraction shared by every numeric routine.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the model is generic over. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Every value used in this crate is representable
    /// (possibly rounded) in both supported types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }

    #[inline]
    fn quarter() -> Self {
        Self::lit(0.25)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dot product of two equal-length slices.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn squared_norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a)
}
