//! Floating-point scalar abstraction.
//!
//! Scoring and distance code is written against [`Scalar`] so it can run in
//! `f32` or `f64`. The crate root fixes `f64` through type aliases.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, NumCast};

/// floating point: f32 or f64
pub trait Scalar: Float + FromPrimitive + NumCast + Debug + Default + Send + Sync + 'static {
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
