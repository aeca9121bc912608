//! Element types for tensor storage.

use std::fmt::{Debug, Display};

/// Floating-point element of a tensor.
///
/// `f32` is the working precision for training and benchmarks. `f64` exists
/// for gradient verification, where central finite differences need the
/// extra mantissa bits. Everything downstream (graph, model, trainer,
/// inference engine) is generic over this trait, so a whole model can be
/// instantiated in either precision.
pub trait Scalar: num_traits::Float + Debug + Display + Default + Send + Sync + 'static {
    /// Bytes of one stored element, used by the arena meter.
    const BYTES: usize;

    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const BYTES: usize = 4;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
