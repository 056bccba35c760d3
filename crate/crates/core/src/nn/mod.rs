//! Forward pass, hooks and SGD training for small MLPs and residual CNNs.
//!
//! Activations are stored channel-major over a batch (`[C, N, H, W]`, or
//! `[F, N]` for flat features) so a channel permutation moves whole
//! contiguous blocks. Every dot product, including the bias, is accumulated
//! in `f64` with the reduction index ascending and rounded to `f32` once.
//! Because an `f32 × f32` product is exact in `f64`, permuting the output
//! axis of a layer only changes where each result is written, and the hook
//! restores the original position bit for bit.

mod data;
mod forward;
mod kernels;
mod models;
mod spec;
mod train;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

pub use data::{blob_pairs, synthetic_split, Dataset, TEST_SIZE, TRAIN_SIZE};
pub use forward::{forward, forward_batch};
pub use models::{ModelKind, CLASSES, INPUT_SHAPE, MICRO_RESNET_CHANNELS};
pub use spec::{ActShape, LayerKind, LayerSpec, ModelSpec};
pub use train::{evaluate_accuracy, predict, train_sgd, Trainer, BATCH_SIZE};

use crate::permutation::is_bijection;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("input shape {shape:?} is neither [features] nor [channels, height, width]")]
    BadInputShape { shape: Vec<usize> },
    #[error("layer {layer}: missing parameter entry {name:?}")]
    MissingParam { layer: usize, name: String },
    #[error("layer {layer}: {detail}")]
    BadParams { layer: usize, detail: String },
    #[error("layer {layer}: shape mismatch: {detail}")]
    ShapeMismatch { layer: usize, detail: String },
    #[error("layer {layer}: unmatched residual marker")]
    UnmatchedResidual { layer: usize },
    #[error("input tensor shape {actual:?} does not match model input {expected:?}")]
    InputMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("hook on layer {layer}: {detail}")]
    BadHook { layer: usize, detail: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training setting: {0}")]
    InvalidTraining(&'static str),
    #[error("dataset: {0}")]
    Dataset(String),
}

/// Inverse permutations applied to layer outputs: `restored[j] = out[inv[j]]`
/// along the channel (or feature) axis, right after the bias add.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HookSet {
    hooks: BTreeMap<usize, Vec<usize>>,
}

impl HookSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `inverse` on `layer`, replacing any earlier hook there.
    pub fn insert(&mut self, layer: usize, inverse: Vec<usize>) -> Result<(), ModelError> {
        if !is_bijection(&inverse) {
            return Err(ModelError::BadHook {
                layer,
                detail: "not a permutation".into(),
            });
        }
        self.hooks.insert(layer, inverse);
        Ok(())
    }

    pub fn get(&self, layer: usize) -> Option<&[usize]> {
        self.hooks.get(&layer).map(Vec::as_slice)
    }

    pub fn layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.hooks.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.hooks.iter().map(|(&l, p)| (l, p.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.hooks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hooks.is_empty()
    }
}
