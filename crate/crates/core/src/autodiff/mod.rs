//! Minimal define-by-run reverse-mode automatic differentiation over dense
//! `f64` matrices.
//!
//! A [`Tape`] owns every intermediate value. Leaves are created from
//! [`Tensor`]s (or plain matrices as constants); each primitive returns a
//! [`Var`] handle and records its backward rule only when at least one input
//! is tracked. [`Tape::backward`] accumulates into the leaf gradient buffers,
//! so calling it twice doubles every leaf gradient.

mod checkpoint;
mod lstm;
mod optim;
mod tape;

pub use checkpoint::{sha256_hex, Checkpoint, NamedTensor, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use lstm::{lstm_sequence, LstmCache};
pub use optim::{zero_grads, Adam, AdamConfig};
pub use tape::{Tape, Var};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A value with an optional gradient slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    value: Matrix,
    #[serde(skip)]
    requires_grad: bool,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(value: Matrix) -> Self {
        Self {
            value,
            requires_grad: false,
            grad: None,
        }
    }

    /// A tensor whose gradient is tracked on any tape it is placed on.
    pub fn param(value: Matrix) -> Self {
        Self {
            value,
            requires_grad: true,
            grad: None,
        }
    }

    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Matrix {
        &mut self.value
    }

    pub fn shape(&self) -> [usize; 2] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `scale * g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64], scale: f64) -> Result<()> {
        if g.len() != self.value.data().len() {
            return Err(Error::dim(
                "accumulate_grad",
                format!("gradient of length {} for shape {:?}", g.len(), self.shape()),
            ));
        }
        let buf = self
            .grad
            .get_or_insert_with(|| vec![0.0; g.len()]);
        for (b, v) in buf.iter_mut().zip(g) {
            *b += scale * v;
        }
        Ok(())
    }
}

/// Something that exposes an ordered list of named trainable tensors.
pub trait Parameters {
    fn named_params(&self) -> Vec<(&'static str, &Tensor)>;
    fn named_params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)>;

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.named_params_mut().into_iter().map(|(_, t)| t).collect()
    }

    fn num_scalars(&self) -> usize {
        self.named_params()
            .iter()
            .map(|(_, t)| t.value().data().len())
            .sum()
    }
}
