//! Floating-point scalar abstraction for the tensor engine.
//!
//! All numeric code is generic over [`Scalar`] so the same kernels run in
//! f32 or f64. The shipped pipeline instantiates f64: the model is small
//! enough that precision is worth more than speed, and it makes the
//! finite-difference gradient checks decisive.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Element type of a [`Tensor`](super::Tensor): `f32` or `f64`.
pub trait Scalar:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum<Self>
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn into_f64(self) -> f64 {
        self
    }
}
