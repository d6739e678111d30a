//! Minimal dense-tensor math with reverse-mode automatic differentiation.
//!
//! Tensors are immutable f64 values in row-major order. A [`Graph`] is a
//! Wengert tape rebuilt per training step: ops append nodes, `backward`
//! replays the tape in reverse and accumulates gradients into leaves that
//! were registered with `requires_grad = true`. Broadcasting is restricted
//! to leading axes (the right operand's shape must be a suffix of the
//! left's); everything else is an explicit reshape.

mod checkpoint;
mod gradcheck;
mod graph;
mod ops;
#[cfg(test)]
mod tests;

pub use checkpoint::{load_params, save_params, ParamStore};
pub use gradcheck::grad_check;
pub use graph::{Graph, GradMap, Value};

use std::sync::Arc;

use thiserror::Error;

/// Surrogate for -inf in masked softmax; keeps arithmetic finite.
pub const MASK_NEG: f64 = -1e30;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("norm {norm:.3e} below guard 1e-12 in {op}")]
    NormTooSmall { op: &'static str, norm: f64 },
    #[error("backward called twice without graph reset")]
    BackwardTwice,
    #[error("loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major f64 tensor. Cheap to clone (shared storage).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::Invalid(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "new" });
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1], vec![v]).expect("finite scalar")
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![0.0; n]),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    /// Raw little-endian bytes of the flat data.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 8);
        for v in self.data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(shape: Vec<usize>, bytes: &[u8]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if bytes.len() != numel * 8 {
            return Err(TensorError::Invalid(format!(
                "expected {} bytes for shape {:?}, got {}",
                numel * 8,
                shape,
                bytes.len()
            )));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }
}
