//! Sanitizing transforms: channel permutation with restoring hooks, the
//! cascaded single-hook variant, global magnitude pruning and retraining.

mod permute;
mod prune;

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

pub use permute::{
    apply_manifest, cascade_permute, hooks_for, inverse_manifest, permute_model, permute_model_with, Axis,
    ManifestEntry, PermutationManifest, PermuteMode,
};
pub use prune::prune_global;

use crate::nn::{forward_batch, train_sgd, Dataset, HookSet, ModelError, ModelSpec};
use crate::rng::SplitMix64;
use crate::tensor::StateDict;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DefenseError {
    #[error("fraction must be in [0, 1], got {0}")]
    Fraction(f64),
    #[error("prune rate must be in [0, 1), got {0}")]
    PruneRate(f64),
    #[error("unsupported structure: {0}")]
    UnsupportedStructure(String),
    #[error("layer {layer}: permutation source returned an invalid permutation")]
    BadPermutation { layer: usize },
    #[error("manifest does not fit the state: {0}")]
    ManifestMismatch(String),
    #[error("state has no weight tensors")]
    NoWeights,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Retraining as a defense: plain SGD on the given data.
pub fn retrain_defense(
    spec: &ModelSpec,
    state: &StateDict,
    data: &Dataset,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<StateDict, DefenseError> {
    Ok(train_sgd(spec, state, data, epochs, lr, seed)?)
}

/// Standard normal inputs for equivalence checks, `[n, input_shape...]`
/// flattened.
pub fn random_inputs(spec: &ModelSpec, n: usize, seed: u64) -> Vec<f32> {
    let per: usize = spec.input_shape.iter().product();
    let mut rng = SplitMix64::for_stream(seed, "equivalence.inputs");
    (0..n * per).map(|_| rng.gaussian() as f32).collect()
}

/// Output comparison between an original model and a defended one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Equivalence {
    pub samples: usize,
    pub max_abs_diff: f64,
    /// Every output element has the same bit pattern.
    pub bitwise: bool,
}

/// Runs both models on the same `n` samples (flattened in `inputs`).
pub fn verify_equivalence(
    spec: &ModelSpec,
    original: &StateDict,
    defended: &StateDict,
    hooks: &HookSet,
    inputs: &[f32],
    n: usize,
) -> Result<Equivalence, DefenseError> {
    let a = forward_batch(spec, original, &HookSet::new(), inputs, n)?;
    let b = forward_batch(spec, defended, hooks, inputs, n)?;
    let mut max_abs_diff = 0.0f64;
    let mut bitwise = true;
    for (x, y) in a.iter().zip(&b) {
        bitwise &= x.to_bits() == y.to_bits();
        let d = (f64::from(*x) - f64::from(*y)).abs();
        // NaN differences count as infinitely far apart.
        max_abs_diff = if d.is_nan() { f64::INFINITY } else { max_abs_diff.max(d) };
    }
    Ok(Equivalence {
        samples: n,
        max_abs_diff,
        bitwise,
    })
}
