//! Scalar abstraction shared by the numeric parts of the crate.
//!
//! The neural kernel, embedding tables and models are generic over a
//! floating-point element type. `f64` is the default everywhere (see the
//! aliases at the crate root); `f32` works for inference-sized experiments.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type usable by every generic routine in this crate.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; panics never occur for finite inputs.
    #[inline]
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts to any float type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Parse a decimal literal as written in embedding files.
    fn parse_decimal(s: &str) -> Option<Self> {
        s.parse::<f64>().ok().map(Self::of)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Dot product of two equal-length slices.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

/// `dst += scale * src`
#[inline]
pub(crate) fn axpy<T: Scalar>(dst: &mut [T], scale: T, src: &[T]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * *s;
    }
}
