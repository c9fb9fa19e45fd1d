//! Scalar abstraction for the numerical core.
//!
//! All estimation routines are generic over [`Scalar`], which bundles the
//! nalgebra [`RealField`] operations with `num-traits` conversions. `f64` is
//! the scalar used by the CLI; `f32` is supported for callers that want it.

use std::fmt::Display;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar type usable throughout the estimation pipeline.
pub trait Scalar:
    RealField + Copy + Default + Display + FromPrimitive + ToPrimitive + Send + Sync
{
}

impl<S> Scalar for S where
    S: RealField + Copy + Default + Display + FromPrimitive + ToPrimitive + Send + Sync
{
}

/// Convert an `f64` constant into the working scalar type.
#[inline]
pub fn real<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant not representable in scalar type")
}

/// Convert a count into the working scalar type.
#[inline]
pub fn count<T: Scalar>(n: usize) -> T {
    T::from_usize(n).expect("count not representable in scalar type")
}
