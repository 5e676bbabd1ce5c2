//! Scalar abstraction: f32 for production paths, f64 for verification.

use num_traits::{Float, FromPrimitive, NumAssignOps};
use std::fmt::{Debug, Display};

/// Floating-point element type of every tensor in the engine.
pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + Debug + Display + Default + Send + Sync + 'static
{
    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn of_usize(n: usize) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn of_usize(n: usize) -> Self {
        n as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn of_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn of_usize(n: usize) -> Self {
        n as f64
    }
}
