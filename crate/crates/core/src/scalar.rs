//! Scalar abstraction for the numeric kernels.
//!
//! Vector arithmetic, thresholding, and objective evaluation are generic
//! over the float width; the crate root exports `f64` aliases which the
//! simulation layers use throughout.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssign};

/// Floating-point scalar (f32 or f64).
pub trait Real: Float + NumAssign + Sum<Self> + Debug + Display + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self {
        Self::from(v).expect("f64 is representable in every Real")
    }

    fn from_usize(v: usize) -> Self {
        Self::from(v).expect("usize is representable in every Real")
    }
}

impl Real for f32 {}
impl Real for f64 {}
