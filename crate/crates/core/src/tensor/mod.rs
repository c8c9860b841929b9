//! Dense row-major matrices and a reverse-mode tape over them.
//!
//! Every value the model touches is a 2-D [`Tensor`]; vectors are `1 × n`
//! rows and scalars are `1 × 1`. Computations are recorded on a [`Tape`]
//! through [`Var`] handles and differentiated with [`Tape::backward`].
//!
//! The engine is generic over [`Real`] and runs in `f32` or `f64`.

mod gradcheck;
mod real;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport, GradEntry};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};

use std::fmt;
use std::ops::Range;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },
    #[error("empty segment {0:?}")]
    EmptySegment(Range<usize>),
    #[error("segment {segment:?} out of bounds for {rows} rows")]
    SegmentOutOfBounds { segment: Range<usize>, rows: usize },
    #[error("index {index} out of bounds for {len}")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("backward requires a 1x1 loss, got {0:?}")]
    NotScalar([usize; 2]),
    #[error("loss does not depend on any leaf that requires grad")]
    DetachedLoss,
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("data length {len} does not match shape {shape:?}")]
    BadLength { len: usize, shape: [usize; 2] },
}

/// A dense `rows × cols` matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::BadLength {
                len: data.len(),
                shape: [rows, cols],
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn row(data: Vec<T>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::row(vec![value])
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    lhs: [1, cols],
                    rhs: [1, r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn row_slice(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The single element of a 1x1 tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &[self.rows, self.cols])
            .field("data", &self.data)
            .finish()
    }
}
