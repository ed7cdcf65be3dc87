//! Scalar abstraction for the numerical core.
//!
//! Everything numeric in this crate is generic over [`Real`], a blanket trait
//! covering `f32` and `f64`. Concrete aliases live at the crate root.

use std::iter::Sum;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the consensus machinery.
///
/// Blanket-implemented; in practice this is `f32` or `f64`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Sum {}

impl<T: RealField + Copy + FromPrimitive + ToPrimitive + Sum> Real for T {}

/// Lift an `f64` literal into the working scalar type.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal not representable in scalar type")
}

/// Lower a scalar to `f64` (for reporting and error messages).
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}
