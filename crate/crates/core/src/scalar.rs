//! Floating point abstraction shared by the numerical modules.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar used by operators, smoothing, the QP solver and SURE.
///
/// Implemented for `f32` and `f64`. Combinatorial quantities (binomial and
/// hypergeometric weights) are always evaluated in `f64` log space and then
/// narrowed with [`Scalar::of`].
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Narrow an `f64` into this scalar type.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn of_usize(x: usize) -> Self {
        Self::of(x as f64)
    }

    /// Widen into `f64`.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar widens into f64")
    }

    /// Machine epsilon of the type.
    fn epsilon() -> Self;
}

impl Scalar for f32 {
    fn epsilon() -> Self {
        f32::EPSILON
    }
}

impl Scalar for f64 {
    fn epsilon() -> Self {
        f64::EPSILON
    }
}

/// Infinity for a generic scalar.
pub(crate) fn infinity<T: Scalar>() -> T {
    T::of(f64::INFINITY)
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}
