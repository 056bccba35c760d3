//! Channel permutation of linear and conv2d layers.
//!
//! Permuting layer `l` by `π` gathers weight rows (output channels) and
//! bias entries: `W'[i] = W[π[i]]`, `b'[i] = b[π[i]]`. The layer then emits
//! `out'[i] = out[π[i]]` and a hook holding `π⁻¹` puts every channel back
//! before the next layer reads it.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::DefenseError;
use crate::nn::{HookSet, LayerKind, ModelSpec};
use crate::permutation::{gather_blocks, identity, invert, is_bijection};
use crate::rng::{random_permutation, shuffle, SplitMix64};
use crate::tensor::StateDict;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Axis {
    /// Output channels or features: weight rows and the bias.
    Output,
    /// Input channels or features: weight columns. A permutation over fewer
    /// entries than the weight has columns moves contiguous column blocks.
    Input,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PermuteMode {
    Hooked,
    Cascaded,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ManifestEntry {
    pub layer: usize,
    pub weight_name: String,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub bias_name: Option<String>,
    pub axis: Axis,
    pub perm: Vec<usize>,
    pub permuted: bool,
    /// A forward hook restores this layer's output order.
    pub hook: bool,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PermutationManifest {
    pub mode: PermuteMode,
    pub seed: u64,
    pub fraction_requested: f64,
    /// Permuted layers over eligible layers.
    pub fraction_realized: f64,
    /// Parameters of permuted layers over parameters of eligible layers.
    pub weighted_element_fraction: f64,
    pub entries: Vec<ManifestEntry>,
}

impl PermutationManifest {
    pub fn permuted_layers(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.permuted && e.axis == Axis::Output)
            .map(|e| e.layer)
            .collect()
    }
}

struct Eligible {
    layer: usize,
    weight: String,
    bias: Option<String>,
    channels: usize,
    params: usize,
}

fn eligible(spec: &ModelSpec, state: &StateDict) -> Result<Vec<Eligible>, DefenseError> {
    // Compiling checks every parameter shape against the layer graph.
    spec.infer_shapes(state)?;
    let mut out = Vec::new();
    for layer in spec.eligible_layers() {
        let l = &spec.layers[layer];
        let weight = l.weight_name().expect("eligible layers have weights").to_string();
        let w = state.require(&weight).map_err(|e| DefenseError::ManifestMismatch(e.to_string()))?;
        let bias = l.bias_name().map(ToString::to_string);
        let params = w.len() + bias.as_ref().and_then(|b| state.get(b)).map_or(0, |t| t.len());
        out.push(Eligible {
            layer,
            channels: w.shape()[0],
            weight,
            bias,
            params,
        });
    }
    Ok(out)
}

/// Number of layers chosen for `fraction` of `eligible`: `⌈fraction × eligible⌉`,
/// ignoring a float excess of up to 1e-9.
fn chosen_count(fraction: f64, eligible: usize) -> usize {
    let x = fraction * eligible as f64 - 1e-9;
    (libm::ceil(x).max(0.0) as usize).min(eligible)
}

/// Permutes `⌈fraction × eligible⌉` seeded, uniformly chosen layers, each by
/// a fresh seeded permutation, and returns the hooks that undo them.
pub fn permute_model(
    spec: &ModelSpec,
    state: &StateDict,
    fraction: f64,
    seed: u64,
) -> Result<(StateDict, HookSet, PermutationManifest), DefenseError> {
    permute_model_with(spec, state, fraction, seed, |layer, len| {
        random_permutation(&mut SplitMix64::for_indexed_stream(seed, "permute.perm", layer as u64), len)
    })
}

/// [`permute_model`] with the per-layer permutation supplied by `source`,
/// called as `source(layer, channels)` for each chosen layer.
pub fn permute_model_with(
    spec: &ModelSpec,
    state: &StateDict,
    fraction: f64,
    seed: u64,
    mut source: impl FnMut(usize, usize) -> Vec<usize>,
) -> Result<(StateDict, HookSet, PermutationManifest), DefenseError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(DefenseError::Fraction(fraction));
    }
    let layers = eligible(spec, state)?;
    let count = chosen_count(fraction, layers.len());
    let mut order: Vec<usize> = (0..layers.len()).collect();
    shuffle(&mut SplitMix64::for_stream(seed, "permute.layers"), &mut order);
    let mut chosen = alloc::vec![false; layers.len()];
    for &i in &order[..count] {
        chosen[i] = true;
    }

    let mut entries = Vec::with_capacity(layers.len());
    for (e, &pick) in layers.iter().zip(&chosen) {
        let perm = if pick {
            let p = source(e.layer, e.channels);
            if p.len() != e.channels || !is_bijection(&p) {
                return Err(DefenseError::BadPermutation { layer: e.layer });
            }
            p
        } else {
            identity(e.channels)
        };
        entries.push(ManifestEntry {
            layer: e.layer,
            weight_name: e.weight.clone(),
            bias_name: e.bias.clone(),
            axis: Axis::Output,
            perm,
            permuted: pick,
            hook: pick,
        });
    }
    let total: usize = layers.iter().map(|e| e.params).sum();
    let moved: usize = layers.iter().zip(&chosen).filter(|(_, &c)| c).map(|(e, _)| e.params).sum();
    let manifest = PermutationManifest {
        mode: PermuteMode::Hooked,
        seed,
        fraction_requested: fraction,
        fraction_realized: ratio(count, layers.len()),
        weighted_element_fraction: ratio(moved, total),
        entries,
    };
    finish(state, manifest)
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn finish(
    state: &StateDict,
    manifest: PermutationManifest,
) -> Result<(StateDict, HookSet, PermutationManifest), DefenseError> {
    let out = apply_manifest(state, &manifest)?;
    let hooks = hooks_for(&manifest)?;
    Ok((out, hooks, manifest))
}

/// Permutes every eligible layer's output and compensates on the next
/// layer's input axis, so only the last layer needs a hook.
///
/// Only sequential models are supported: a residual add would need both
/// branches to agree on one permutation.
pub fn cascade_permute(
    spec: &ModelSpec,
    state: &StateDict,
    seed: u64,
) -> Result<(StateDict, HookSet, PermutationManifest), DefenseError> {
    if let Some(i) = spec
        .layers
        .iter()
        .position(|l| matches!(l.kind, LayerKind::ResidualBegin | LayerKind::ResidualAdd))
    {
        return Err(DefenseError::UnsupportedStructure(format!(
            "residual connection at layer {i} cannot be cascaded"
        )));
    }
    let layers = eligible(spec, state)?;
    if layers.is_empty() {
        return Err(DefenseError::UnsupportedStructure("no linear or conv2d layers".into()));
    }
    let mut entries = Vec::new();
    for (i, e) in layers.iter().enumerate() {
        let perm = random_permutation(
            &mut SplitMix64::for_indexed_stream(seed, "cascade.perm", e.layer as u64),
            e.channels,
        );
        let last = i + 1 == layers.len();
        entries.push(ManifestEntry {
            layer: e.layer,
            weight_name: e.weight.clone(),
            bias_name: e.bias.clone(),
            axis: Axis::Output,
            perm: perm.clone(),
            permuted: true,
            hook: last,
        });
        if let Some(next) = layers.get(i + 1) {
            entries.push(ManifestEntry {
                layer: next.layer,
                weight_name: next.weight.clone(),
                bias_name: None,
                axis: Axis::Input,
                perm,
                permuted: true,
                hook: false,
            });
        }
    }
    let manifest = PermutationManifest {
        mode: PermuteMode::Cascaded,
        seed,
        fraction_requested: 1.0,
        fraction_realized: 1.0,
        weighted_element_fraction: 1.0,
        entries,
    };
    finish(state, manifest)
}

/// Applies every permuted entry of `manifest` to a copy of `state`.
pub fn apply_manifest(state: &StateDict, manifest: &PermutationManifest) -> Result<StateDict, DefenseError> {
    let mut out = state.clone();
    for e in manifest.entries.iter().filter(|e| e.permuted) {
        if !is_bijection(&e.perm) {
            return Err(DefenseError::BadPermutation { layer: e.layer });
        }
        let w = out
            .get_mut(&e.weight_name)
            .ok_or_else(|| DefenseError::ManifestMismatch(format!("no entry {:?}", e.weight_name)))?;
        let rows = w.shape()[0];
        let cols = w.len() / rows;
        match e.axis {
            Axis::Output => {
                if rows != e.perm.len() {
                    return Err(mismatch(e, rows));
                }
                let moved = gather_blocks(w.data(), &e.perm, cols);
                w.data_mut().copy_from_slice(&moved);
                if let Some(b) = &e.bias_name {
                    let b = out
                        .get_mut(b)
                        .ok_or_else(|| DefenseError::ManifestMismatch(format!("no entry {b:?}")))?;
                    if b.len() != e.perm.len() {
                        return Err(mismatch(e, b.len()));
                    }
                    let moved = gather_blocks(b.data(), &e.perm, 1);
                    b.data_mut().copy_from_slice(&moved);
                }
            }
            Axis::Input => {
                if e.perm.is_empty() || cols % e.perm.len() != 0 {
                    return Err(mismatch(e, cols));
                }
                let block = cols / e.perm.len();
                let data = w.data_mut();
                for row in data.chunks_exact_mut(cols) {
                    let moved = gather_blocks(row, &e.perm, block);
                    row.copy_from_slice(&moved);
                }
            }
        }
    }
    Ok(out)
}

fn mismatch(e: &ManifestEntry, len: usize) -> DefenseError {
    DefenseError::ManifestMismatch(format!(
        "layer {} has {} entries on the permuted axis, manifest has {}",
        e.layer,
        len,
        e.perm.len()
    ))
}

/// The manifest that undoes `manifest` when applied after it.
pub fn inverse_manifest(manifest: &PermutationManifest) -> PermutationManifest {
    let mut inv = manifest.clone();
    inv.entries.reverse();
    for e in &mut inv.entries {
        e.perm = invert(&e.perm);
        e.hook = false;
    }
    inv
}

/// Hooks holding `π⁻¹` for every hooked entry.
pub fn hooks_for(manifest: &PermutationManifest) -> Result<HookSet, DefenseError> {
    let mut hooks = HookSet::new();
    for e in manifest.entries.iter().filter(|e| e.permuted && e.hook) {
        if e.axis != Axis::Output || !is_bijection(&e.perm) {
            return Err(DefenseError::BadPermutation { layer: e.layer });
        }
        hooks.insert(e.layer, invert(&e.perm))?;
    }
    Ok(hooks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defense::{random_inputs, verify_equivalence};
    use crate::nn::{LayerSpec, ModelKind};
    use crate::tensor::Tensor;
    use alloc::vec;

    fn two_unit() -> (ModelSpec, StateDict) {
        let spec = ModelSpec {
            input_shape: vec![2],
            layers: vec![LayerSpec::linear("fc")],
        };
        let mut s = StateDict::new();
        s.insert("fc.weight", Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        s.insert("fc.bias", Tensor::new(vec![2], vec![5.0, 6.0]).unwrap()).unwrap();
        (spec, s)
    }

    #[test]
    fn hand_computed_swap() {
        let (spec, s) = two_unit();
        let (out, hooks, m) = permute_model_with(&spec, &s, 1.0, 0, |_, _| vec![1, 0]).unwrap();
        assert_eq!(out.get("fc.weight").unwrap().data(), &[3.0, 4.0, 1.0, 2.0]);
        assert_eq!(out.get("fc.bias").unwrap().data(), &[6.0, 5.0]);
        assert_eq!(hooks.get(0), Some(&[1usize, 0][..]));
        assert_eq!(m.fraction_realized, 1.0);
        // x = (1, 1): original output (8, 13), permuted layer gives (13, 8).
        let x = [1.0f32, 1.0];
        let raw = crate::nn::forward_batch(&spec, &out, &HookSet::new(), &x, 1).unwrap();
        assert_eq!(raw, vec![13.0, 8.0]);
        let fixed = crate::nn::forward_batch(&spec, &out, &hooks, &x, 1).unwrap();
        assert_eq!(fixed, vec![8.0, 13.0]);
    }

    #[test]
    fn fraction_zero_and_identity_seam() {
        let spec = ModelKind::Mlp.spec();
        let s = ModelKind::Mlp.init(3);
        let (out, hooks, m) = permute_model(&spec, &s, 0.0, 9).unwrap();
        assert_eq!(out, s);
        assert!(hooks.is_empty());
        assert!(m.permuted_layers().is_empty());
        let (out, hooks, _) = permute_model_with(&spec, &s, 1.0, 9, |_, n| identity(n)).unwrap();
        assert_eq!(out, s);
        assert_eq!(hooks.len(), 3);
    }

    #[test]
    fn layer_counts_follow_ceiling() {
        assert_eq!(chosen_count(0.0, 7), 0);
        assert_eq!(chosen_count(0.1, 7), 1);
        assert_eq!(chosen_count(0.5, 6), 3);
        assert_eq!(chosen_count(0.3 / 0.1 / 10.0, 10), 3);
        assert_eq!(chosen_count(1.0, 7), 7);
        let spec = ModelKind::MicroResNet.spec();
        let s = ModelKind::MicroResNet.init(1);
        for (f, want) in [(0.1, 1), (0.25, 2), (0.5, 3), (0.75, 5), (1.0, 6)] {
            let (_, hooks, m) = permute_model(&spec, &s, f, 4).unwrap();
            assert_eq!(hooks.len(), want, "{f}");
            assert_eq!(m.fraction_realized, want as f64 / 6.0);
        }
        assert!(matches!(permute_model(&spec, &s, 1.5, 0), Err(DefenseError::Fraction(_))));
        assert!(matches!(permute_model(&spec, &s, f64::NAN, 0), Err(DefenseError::Fraction(_))));
    }

    #[test]
    fn bad_source_is_rejected() {
        let (spec, s) = two_unit();
        assert_eq!(
            permute_model_with(&spec, &s, 1.0, 0, |_, _| vec![0, 0]).unwrap_err(),
            DefenseError::BadPermutation { layer: 0 }
        );
    }

    #[test]
    fn hooked_models_are_bitwise_equal() {
        for kind in ModelKind::ALL {
            let spec = kind.spec();
            let s = kind.init(11);
            let x = random_inputs(&spec, 20, 5);
            for seed in 0..3 {
                let (out, hooks, _) = permute_model(&spec, &s, 1.0, seed).unwrap();
                assert_ne!(out, s);
                let eq = verify_equivalence(&spec, &s, &out, &hooks, &x, 20).unwrap();
                assert!(eq.bitwise && eq.max_abs_diff == 0.0, "{kind:?}");
                let bare = verify_equivalence(&spec, &s, &out, &HookSet::new(), &x, 20).unwrap();
                assert!(!bare.bitwise);
            }
        }
    }

    #[test]
    fn inverse_manifest_restores_state() {
        for kind in ModelKind::ALL {
            let s = kind.init(2);
            let (out, _, m) = permute_model(&kind.spec(), &s, 0.5, 8).unwrap();
            assert_eq!(apply_manifest(&out, &inverse_manifest(&m)).unwrap(), s);
        }
        let spec = ModelKind::Mlp.spec();
        let s = ModelKind::Mlp.init(2);
        let (out, _, m) = cascade_permute(&spec, &s, 8).unwrap();
        assert_eq!(apply_manifest(&out, &inverse_manifest(&m)).unwrap(), s);
    }

    #[test]
    fn cascade_uses_one_hook() {
        let spec = ModelKind::Mlp.spec();
        let s = ModelKind::Mlp.init(4);
        let (out, hooks, m) = cascade_permute(&spec, &s, 1).unwrap();
        assert_eq!(hooks.layers().collect::<Vec<_>>(), vec![5]);
        assert_eq!(m.mode, PermuteMode::Cascaded);
        let x = random_inputs(&spec, 50, 2);
        let eq = verify_equivalence(&spec, &s, &out, &hooks, &x, 50).unwrap();
        assert!(eq.max_abs_diff < 1e-5, "{eq:?}");
        assert!(matches!(
            cascade_permute(&ModelKind::MicroResNet.spec(), &ModelKind::MicroResNet.init(0), 1),
            Err(DefenseError::UnsupportedStructure(_))
        ));
    }

    #[test]
    fn cascade_through_spatial_flatten() {
        let spec = ModelSpec {
            input_shape: vec![2, 4, 4],
            layers: vec![
                LayerSpec::conv2d("c", 1, 1),
                LayerSpec::relu(),
                LayerSpec::flatten(),
                LayerSpec::linear("fc"),
            ],
        };
        let mut rng = SplitMix64::new(3);
        let mut s = StateDict::new();
        let mut t = |shape: Vec<usize>| {
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.gaussian() as f32).collect()).unwrap()
        };
        s.insert("c.weight", t(vec![3, 2, 3, 3])).unwrap();
        s.insert("c.bias", t(vec![3])).unwrap();
        s.insert("fc.weight", t(vec![5, 48])).unwrap();
        s.insert("fc.bias", t(vec![5])).unwrap();
        let (out, hooks, _) = cascade_permute(&spec, &s, 6).unwrap();
        assert_eq!(hooks.len(), 1);
        let x = random_inputs(&spec, 30, 1);
        let eq = verify_equivalence(&spec, &s, &out, &hooks, &x, 30).unwrap();
        assert!(eq.max_abs_diff < 1e-5, "{eq:?}");
    }

    #[test]
    fn single_layer_cascade_matches_hooked() {
        let (spec, s) = two_unit();
        let (a, ha, _) = cascade_permute(&spec, &s, 3).unwrap();
        let (b, hb, _) = permute_model_with(&spec, &s, 1.0, 3, |layer, n| {
            random_permutation(&mut SplitMix64::for_indexed_stream(3, "cascade.perm", layer as u64), n)
        })
        .unwrap();
        assert_eq!((a, ha), (b, hb));
    }
}
