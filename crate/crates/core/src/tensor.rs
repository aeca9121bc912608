//! Dense row-major tensors.

use std::ops::{Deref, DerefMut};

use thiserror::Error;

use crate::mem;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShapeError {
    #[error("shape {shape:?} implies {expected} values, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Mismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: shape {shape:?} has an empty extent")]
    EmptyExtent { op: &'static str, shape: Vec<usize> },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
}

// ── Metered storage ─────────────────────────────────────────────────────────

/// Flat element storage that reports its logical size to the arena meter for
/// the duration of its lifetime.
#[derive(Debug)]
pub(crate) struct Buf<F: Scalar>(Vec<F>);

impl<F: Scalar> Buf<F> {
    pub(crate) fn new(data: Vec<F>) -> Self {
        mem::note_alloc((data.len() * F::BYTES) as u64);
        Buf(data)
    }
}

impl<F: Scalar> Clone for Buf<F> {
    fn clone(&self) -> Self {
        Buf::new(self.0.clone())
    }
}

impl<F: Scalar> Drop for Buf<F> {
    fn drop(&mut self) {
        mem::note_free((self.0.len() * F::BYTES) as u64);
    }
}

impl<F: Scalar> Deref for Buf<F> {
    type Target = [F];
    fn deref(&self) -> &[F] {
        &self.0
    }
}

impl<F: Scalar> DerefMut for Buf<F> {
    fn deref_mut(&mut self) -> &mut [F] {
        &mut self.0
    }
}

// ── Tensor ──────────────────────────────────────────────────────────────────

/// A dense row-major tensor. The element count always equals the product of
/// the shape extents; construction enforces it.
#[derive(Debug, Clone)]
pub struct Tensor<F: Scalar> {
    shape: Vec<usize>,
    data: Buf<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self, ShapeError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(ShapeError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data: Buf::new(data),
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: Buf::new(vec![F::zero(); n]),
        }
    }

    pub fn full(shape: Vec<usize>, value: F) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: Buf::new(vec![value; n]),
        }
    }

    pub fn scalar(value: F) -> Self {
        Tensor {
            shape: vec![],
            data: Buf::new(vec![value]),
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> F) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: Buf::new((0..n).map(&mut f).collect()),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.is_empty()
    }

    /// Extent of the last axis; scalars report 1.
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Leading extents collapsed into a row count: a `[a, b, c]` tensor is
    /// `a*b` rows of length `c`.
    pub fn row_count(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.numel() / self.last_dim()
        }
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn item(&self) -> F {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: Buf::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    /// Element-wise accumulate: `self += other`. Shapes must match.
    pub fn add_assign(&mut self, other: &Tensor<F>) -> Result<(), ShapeError> {
        if self.shape != other.shape {
            return Err(ShapeError::Mismatch {
                op: "add_assign",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn scale_assign(&mut self, factor: F) {
        for v in self.data.iter_mut() {
            *v = *v * factor;
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Convert element type, preserving shape. Lossy when narrowing.
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: Buf::new(self.data.iter().map(|v| G::from_f64(v.as_f64())).collect()),
        }
    }
}

impl<F: Scalar> PartialEq for Tensor<F> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a == b || (a.is_nan() && b.is_nan()))
    }
}
