//! Minimal dense reverse-mode automatic differentiation over f64 tensors.
//!
//! A [`Tape`] is built fresh for every step: parameters are recorded from a
//! [`ParamStore`], operations append nodes, and [`Tape::backward`] returns
//! gradients for trainable leaves only.

mod check;
pub(crate) mod kernels;
mod tape;
mod tensor;

pub use check::{grad_check, numeric_gradient, tape_function};
pub(crate) use tape::sigmoid_scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index {index} out of range for dimension {len}")]
    Bounds { index: usize, len: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Owns every parameter of a model, in registration order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> ParamId {
        self.params.push(Parameter {
            name: name.into(),
            tensor,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn freeze_all(&mut self) {
        self.params.iter_mut().for_each(|p| p.trainable = false);
    }

    pub fn count(&self, trainable: bool) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable == trainable)
            .map(|p| p.tensor.numel())
            .sum()
    }

    /// Trainable values concatenated in registration order.
    pub fn trainable_flat(&self) -> Vec<f64> {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .flat_map(|p| p.tensor.data().iter().copied())
            .collect()
    }

    pub fn set_trainable_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        for p in self.params.iter_mut().filter(|p| p.trainable) {
            let n = p.tensor.numel();
            p.tensor.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        assert_eq!(at, flat.len(), "flat vector length mismatch");
    }

    /// Flattens gradients to match [`ParamStore::trainable_flat`]; missing
    /// gradients count as zero.
    pub fn flatten_grads(&self, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for (id, p) in self.iter().filter(|(_, p)| p.trainable) {
            match grads.param(id) {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat_n(0.0, p.tensor.numel())),
            }
        }
        out
    }

    /// Every tensor's values, little-endian, in registration order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.params
            .iter()
            .flat_map(|p| p.tensor.data().iter().flat_map(|x| x.to_le_bytes()))
            .collect()
    }
}
