use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{gemm, im2col};
use super::spec::{ActShape, OpKind, Plan};
use super::{HookSet, ModelError, ModelSpec};
use crate::permutation::gather_blocks;
use crate::tensor::{StateDict, Tensor};

/// Channel-major activations: `rows` channels, each holding `n` samples of
/// `inner` contiguous elements.
#[derive(Clone, Debug)]
pub(crate) struct Batch {
    pub rows: usize,
    pub n: usize,
    pub inner: usize,
    pub data: Vec<f32>,
}

impl Batch {
    /// Converts sample-major `[n, ...shape]` data to channel-major.
    pub fn from_samples(shape: ActShape, n: usize, samples: &[f32]) -> Self {
        let rows = shape.channels();
        let inner = shape.inner();
        let per = rows * inner;
        debug_assert_eq!(samples.len(), n * per);
        let mut data = vec![0.0f32; samples.len()];
        for s in 0..n {
            for c in 0..rows {
                let src = &samples[s * per + c * inner..s * per + (c + 1) * inner];
                data[(c * n + s) * inner..(c * n + s + 1) * inner].copy_from_slice(src);
            }
        }
        Self {
            rows,
            n,
            inner,
            data,
        }
    }

    pub fn to_samples(&self) -> Vec<f32> {
        let per = self.rows * self.inner;
        let mut out = vec![0.0f32; self.data.len()];
        for c in 0..self.rows {
            for s in 0..self.n {
                let src = &self.data[(c * self.n + s) * self.inner..(c * self.n + s + 1) * self.inner];
                out[s * per + c * self.inner..s * per + (c + 1) * self.inner].copy_from_slice(src);
            }
        }
        out
    }
}

/// What the backward pass needs from each layer.
pub(crate) enum Saved {
    Nothing,
    /// Linear input as an `[in, n]` matrix.
    LinearInput(Vec<f64>),
    /// Conv input unfolded by im2col.
    Cols(Vec<f64>),
    /// Relu output.
    ReluOut(Vec<f32>),
}

pub(crate) fn to_f64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| f64::from(v)).collect()
}

pub(crate) fn check_hooks(plan: &Plan, hooks: &HookSet) -> Result<(), ModelError> {
    for (layer, inv) in hooks.iter() {
        let Some(op) = plan.ops.get(layer) else {
            return Err(ModelError::BadHook {
                layer,
                detail: format!("model has only {} layers", plan.ops.len()),
            });
        };
        let channels = op.out_shape.channels();
        if inv.len() != channels {
            return Err(ModelError::BadHook {
                layer,
                detail: format!("permutation of length {} on an axis of {channels}", inv.len()),
            });
        }
    }
    Ok(())
}

/// Runs the compiled plan. When `saved` is given, one entry per layer is
/// pushed for backpropagation; training always runs without hooks.
pub(crate) fn run(
    plan: &Plan,
    state: &StateDict,
    hooks: &HookSet,
    mut x: Batch,
    mut saved: Option<&mut Vec<Saved>>,
) -> Batch {
    let n = x.n;
    let mut skips: Vec<Batch> = Vec::new();
    for (li, op) in plan.ops.iter().enumerate() {
        let mut keep = Saved::Nothing;
        x = match op.kind {
            OpKind::Linear { inp, out } => {
                let (wi, bi) = op.params.expect("linear has params");
                let w = to_f64(state.entry(wi).1.data());
                let b = state.entry(bi).1.data();
                let xf = to_f64(&x.data);
                let mut acc = vec![0.0f64; out * n];
                gemm(out, inp, n, &w, &xf, &mut acc);
                let mut y = vec![0.0f32; out * n];
                for o in 0..out {
                    let bo = f64::from(b[o]);
                    for s in 0..n {
                        y[o * n + s] = (acc[o * n + s] + bo) as f32;
                    }
                }
                if saved.is_some() {
                    keep = Saved::LinearInput(xf);
                }
                Batch {
                    rows: out,
                    n,
                    inner: 1,
                    data: y,
                }
            }
            OpKind::Conv(g) => {
                let (wi, bi) = op.params.expect("conv has params");
                let w = to_f64(state.entry(wi).1.data());
                let b = state.entry(bi).1.data();
                let cols = im2col(&g, n, &x.data);
                let p = n * g.ho * g.wo;
                let mut acc = vec![0.0f64; g.cout * p];
                gemm(g.cout, g.k(), p, &w, &cols, &mut acc);
                let mut y = vec![0.0f32; g.cout * p];
                for o in 0..g.cout {
                    let bo = f64::from(b[o]);
                    for (dst, &a) in y[o * p..(o + 1) * p].iter_mut().zip(&acc[o * p..(o + 1) * p]) {
                        *dst = (a + bo) as f32;
                    }
                }
                if saved.is_some() {
                    keep = Saved::Cols(cols);
                }
                Batch {
                    rows: g.cout,
                    n,
                    inner: g.ho * g.wo,
                    data: y,
                }
            }
            OpKind::Relu => {
                for v in x.data.iter_mut() {
                    if !(*v > 0.0) {
                        *v = 0.0;
                    }
                }
                if saved.is_some() {
                    keep = Saved::ReluOut(x.data.clone());
                }
                x
            }
            OpKind::Gap => {
                let inv = 1.0 / x.inner as f64;
                let data = x
                    .data
                    .chunks_exact(x.inner)
                    .map(|c| (c.iter().map(|&v| f64::from(v)).sum::<f64>() * inv) as f32)
                    .collect();
                Batch {
                    rows: x.rows,
                    n,
                    inner: 1,
                    data,
                }
            }
            OpKind::Flatten => {
                if x.inner == 1 {
                    x
                } else {
                    let features = x.rows * x.inner;
                    let mut data = vec![0.0f32; features * n];
                    for c in 0..x.rows {
                        for s in 0..n {
                            for q in 0..x.inner {
                                data[(c * x.inner + q) * n + s] = x.data[(c * n + s) * x.inner + q];
                            }
                        }
                    }
                    Batch {
                        rows: features,
                        n,
                        inner: 1,
                        data,
                    }
                }
            }
            OpKind::ResBegin => {
                skips.push(x.clone());
                x
            }
            OpKind::ResAdd => {
                let skip = skips.pop().expect("plan validated residual pairs");
                for (v, s) in x.data.iter_mut().zip(&skip.data) {
                    *v += *s;
                }
                x
            }
        };
        if let Some(inv) = hooks.get(li) {
            x.data = gather_blocks(&x.data, inv, n * x.inner);
        }
        if let Some(s) = saved.as_deref_mut() {
            s.push(keep);
        }
    }
    x
}

/// Forward pass over `n` samples stored sample-major. Returns the outputs
/// sample-major as well.
pub fn forward_batch(
    spec: &ModelSpec,
    state: &StateDict,
    hooks: &HookSet,
    samples: &[f32],
    n: usize,
) -> Result<Vec<f32>, ModelError> {
    let plan = Plan::compile(spec, state)?;
    check_hooks(&plan, hooks)?;
    if samples.len() != n * plan.input.numel() {
        return Err(ModelError::InputMismatch {
            expected: spec.input_shape.clone(),
            actual: vec![samples.len()],
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let x = Batch::from_samples(plan.input, n, samples);
    Ok(run(&plan, state, hooks, x, None).to_samples())
}

/// Forward pass. `input` is either one sample shaped like
/// `spec.input_shape` or a batch `[N, ...input_shape]`; the output has the
/// matching form.
pub fn forward(
    spec: &ModelSpec,
    state: &StateDict,
    hooks: &HookSet,
    input: &Tensor,
) -> Result<Tensor, ModelError> {
    let plan = Plan::compile(spec, state)?;
    check_hooks(&plan, hooks)?;
    let dims = input.shape();
    let batched = if dims == spec.input_shape.as_slice() {
        false
    } else if dims.len() == spec.input_shape.len() + 1 && dims[1..] == spec.input_shape[..] {
        true
    } else {
        return Err(ModelError::InputMismatch {
            expected: spec.input_shape.clone(),
            actual: dims.to_vec(),
        });
    };
    let n = if batched { dims[0] } else { 1 };
    let x = Batch::from_samples(plan.input, n, input.data());
    let out = run(&plan, state, hooks, x, None).to_samples();
    let mut shape = plan.output.dims();
    if batched {
        shape.insert(0, n);
    }
    Ok(Tensor::new(shape, out).expect("output length follows the plan"))
}
