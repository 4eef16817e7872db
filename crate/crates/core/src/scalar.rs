//! Scalar abstraction over the floating-point types the engine runs on.
//!
//! All numeric kernels (encoder forward/backward, losses, similarity search)
//! are generic over [`Scalar`] so the same code serves the fast `f32` path
//! used for training and indexing and the `f64` path used for gradient
//! verification.

use std::fmt::{Debug, Display};

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + ScalarOperand + Debug + Display + Send + Sync + 'static
{
    /// Short tag recorded in checkpoints and index headers.
    const NAME: &'static str;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
}

/// Converts an `f64` constant into the working scalar type.
///
/// Conversion from `f64` is infallible for both supported scalars, so the
/// unwrap never fires.
#[inline]
pub fn fl<F: Scalar>(v: f64) -> F {
    F::from_f64(v).expect("f64 converts to any supported scalar")
}
