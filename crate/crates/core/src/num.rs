//! Scalar abstraction: every numeric routine in this crate is generic over
//! [`Float`], which `f32` and `f64` implement.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar usable throughout the toolkit.
pub trait Float:
    num_traits::Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + LinalgScalar
    + ScalarOperand
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, used for constants and RNG draws.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Float")
    }

    /// Lossy conversion to `f64`, used for reporting and serialization.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Float converts to f64")
    }

    /// `usize` as a scalar (batch sizes, dimensions).
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize converts to Float")
    }
}

impl Float for f32 {}
impl Float for f64 {}
