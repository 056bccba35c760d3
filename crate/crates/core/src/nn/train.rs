use alloc::vec;
use alloc::vec::Vec;

use super::forward::{check_hooks, run, to_f64, Batch, Saved};
use super::kernels::{col2im, gemm, transpose};
use super::spec::{ActShape, OpKind, Plan};
use super::{Dataset, HookSet, ModelError, ModelSpec};
use crate::rng::{shuffle, SplitMix64};
use crate::tensor::StateDict;

pub const BATCH_SIZE: usize = 32;

/// Samples per forward call during evaluation.
const EVAL_CHUNK: usize = 250;

/// Epoch-by-epoch SGD. The shuffle of epoch `e` is drawn from its own
/// stream of `seed`, so stopping after `k` epochs gives the same weights as
/// a `k`-epoch run.
pub struct Trainer<'a> {
    plan: Plan,
    state: StateDict,
    data: &'a Dataset,
    lr: f64,
    seed: u64,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        spec: &ModelSpec,
        state: StateDict,
        data: &'a Dataset,
        lr: f64,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(ModelError::InvalidTraining("learning rate must be positive"));
        }
        if data.is_empty() {
            return Err(ModelError::InvalidTraining("dataset is empty"));
        }
        if data.sample_shape() != spec.input_shape.as_slice() {
            return Err(ModelError::InputMismatch {
                expected: spec.input_shape.clone(),
                actual: data.sample_shape().to_vec(),
            });
        }
        let plan = Plan::compile(spec, &state)?;
        if plan.output != ActShape::Flat(data.class_count()) {
            return Err(ModelError::Dataset(alloc::format!(
                "model output {:?} does not match {} classes",
                plan.output,
                data.class_count()
            )));
        }
        Ok(Self {
            plan,
            state,
            data,
            lr,
            seed,
            epoch: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn state(&self) -> &StateDict {
        &self.state
    }

    pub fn into_state(self) -> StateDict {
        self.state
    }

    /// One pass over the shuffled data in mini-batches of [`BATCH_SIZE`].
    /// Returns the mean batch loss.
    pub fn run_epoch(&mut self) -> Result<f64, ModelError> {
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        let mut rng = SplitMix64::for_indexed_stream(self.seed, "train.shuffle", self.epoch as u64);
        shuffle(&mut rng, &mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, idx) in order.chunks(BATCH_SIZE).enumerate() {
            let loss = self.step(idx);
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch: self.epoch,
                    batch: b,
                });
            }
            total += loss;
            batches += 1;
        }
        self.epoch += 1;
        Ok(total / batches as f64)
    }

    fn step(&mut self, idx: &[usize]) -> f64 {
        let n = idx.len();
        let mut samples = Vec::with_capacity(n * self.data.sample_len());
        for &i in idx {
            samples.extend_from_slice(self.data.sample(i));
        }
        let x = Batch::from_samples(self.plan.input, n, &samples);
        let mut saved = Vec::with_capacity(self.plan.ops.len());
        let out = run(&self.plan, &self.state, &HookSet::new(), x, Some(&mut saved));

        // Softmax cross-entropy, averaged over the batch.
        let classes = out.rows;
        let mut g = vec![0.0f64; classes * n];
        let mut loss = 0.0;
        for (s, &i) in idx.iter().enumerate() {
            let label = self.data.labels()[i];
            let z = |c: usize| f64::from(out.data[c * n + s]);
            let m = (0..classes).map(z).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = (0..classes).map(|c| libm::exp(z(c) - m)).sum();
            let lse = m + libm::log(sum);
            loss += lse - z(label);
            for c in 0..classes {
                let p = libm::exp(z(c) - lse);
                g[c * n + s] = (p - if c == label { 1.0 } else { 0.0 }) / n as f64;
            }
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return loss;
        }

        let grads = self.backward(g, n, &saved);
        for (op, grad) in self.plan.ops.iter().zip(grads) {
            let (Some((wi, bi)), Some((dw, db))) = (op.params, grad) else {
                continue;
            };
            for (w, d) in self.state.tensor_at_mut(wi).data_mut().iter_mut().zip(&dw) {
                *w = (f64::from(*w) - self.lr * d) as f32;
            }
            for (b, d) in self.state.tensor_at_mut(bi).data_mut().iter_mut().zip(&db) {
                *b = (f64::from(*b) - self.lr * d) as f32;
            }
        }
        loss
    }

    /// Backpropagates `g` (gradient of the loss wrt the output batch) and
    /// returns `(dW, db)` for every parameterized layer.
    #[allow(clippy::type_complexity)]
    fn backward(&self, mut g: Vec<f64>, n: usize, saved: &[Saved]) -> Vec<Option<(Vec<f64>, Vec<f64>)>> {
        let ops = &self.plan.ops;
        let mut grads: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; ops.len()];
        let first_param = ops.iter().position(|o| o.params.is_some()).unwrap_or(ops.len());
        let mut skips: Vec<Vec<f64>> = Vec::new();

        for li in (first_param..ops.len()).rev() {
            let op = &ops[li];
            let need_dx = li > first_param;
            match op.kind {
                OpKind::Linear { inp, out } => {
                    let Saved::LinearInput(xf) = &saved[li] else {
                        unreachable!("linear saves its input")
                    };
                    let mut dw = vec![0.0; out * inp];
                    gemm(out, n, inp, &g, &transpose(inp, n, xf), &mut dw);
                    let db = g.chunks_exact(n).map(|r| r.iter().sum()).collect();
                    if need_dx {
                        let w = to_f64(self.state.entry(op.params.unwrap().0).1.data());
                        let mut dx = vec![0.0; inp * n];
                        gemm(inp, out, n, &transpose(out, inp, &w), &g, &mut dx);
                        g = dx;
                    }
                    grads[li] = Some((dw, db));
                }
                OpKind::Conv(geom) => {
                    let Saved::Cols(cols) = &saved[li] else {
                        unreachable!("conv saves its columns")
                    };
                    let k = geom.k();
                    let p = n * geom.ho * geom.wo;
                    let mut dw = vec![0.0; geom.cout * k];
                    gemm(geom.cout, p, k, &g, &transpose(k, p, cols), &mut dw);
                    let db = g.chunks_exact(p).map(|r| r.iter().sum()).collect();
                    if need_dx {
                        let w = to_f64(self.state.entry(op.params.unwrap().0).1.data());
                        let mut dcols = vec![0.0; k * p];
                        gemm(k, geom.cout, p, &transpose(geom.cout, k, &w), &g, &mut dcols);
                        g = col2im(&geom, n, &dcols);
                    }
                    grads[li] = Some((dw, db));
                }
                OpKind::Relu => {
                    let Saved::ReluOut(y) = &saved[li] else {
                        unreachable!("relu saves its output")
                    };
                    for (d, &v) in g.iter_mut().zip(y) {
                        if !(v > 0.0) {
                            *d = 0.0;
                        }
                    }
                }
                OpKind::Gap => {
                    let inner = op.in_shape.inner();
                    let scale = 1.0 / inner as f64;
                    g = g.iter().flat_map(|&d| core::iter::repeat(d * scale).take(inner)).collect();
                }
                OpKind::Flatten => {
                    let (rows, inner) = (op.in_shape.channels(), op.in_shape.inner());
                    if inner > 1 {
                        let mut dx = vec![0.0; g.len()];
                        for c in 0..rows {
                            for s in 0..n {
                                for q in 0..inner {
                                    dx[(c * n + s) * inner + q] = g[(c * inner + q) * n + s];
                                }
                            }
                        }
                        g = dx;
                    }
                }
                OpKind::ResAdd => skips.push(g.clone()),
                OpKind::ResBegin => {
                    if let Some(skip) = skips.pop() {
                        for (d, s) in g.iter_mut().zip(&skip) {
                            *d += s;
                        }
                    }
                }
            }
        }
        grads
    }
}

/// Trains a copy of `state` for `epochs` epochs of plain SGD.
pub fn train_sgd(
    spec: &ModelSpec,
    state: &StateDict,
    data: &Dataset,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<StateDict, ModelError> {
    if epochs == 0 {
        return Err(ModelError::InvalidTraining("epochs must be at least 1"));
    }
    let mut t = Trainer::new(spec, state.clone(), data, lr, seed)?;
    for _ in 0..epochs {
        t.run_epoch()?;
    }
    Ok(t.into_state())
}

/// Predicted class per sample. Ties go to the lowest class index.
pub fn predict(
    spec: &ModelSpec,
    state: &StateDict,
    hooks: &HookSet,
    data: &Dataset,
) -> Result<Vec<usize>, ModelError> {
    let plan = Plan::compile(spec, state)?;
    check_hooks(&plan, hooks)?;
    if data.sample_shape() != spec.input_shape.as_slice() {
        return Err(ModelError::InputMismatch {
            expected: spec.input_shape.clone(),
            actual: data.sample_shape().to_vec(),
        });
    }
    let classes = plan.output.numel();
    let k = data.sample_len();
    let mut preds = Vec::with_capacity(data.len());
    let mut start = 0;
    while start < data.len() {
        let n = EVAL_CHUNK.min(data.len() - start);
        let samples = &data.inputs().data()[start * k..(start + n) * k];
        let out = run(&plan, state, hooks, Batch::from_samples(plan.input, n, samples), None).to_samples();
        for row in out.chunks_exact(classes) {
            let mut best = 0;
            for c in 1..classes {
                if row[c] > row[best] {
                    best = c;
                }
            }
            preds.push(best);
        }
        start += n;
    }
    Ok(preds)
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn evaluate_accuracy(
    spec: &ModelSpec,
    state: &StateDict,
    hooks: &HookSet,
    data: &Dataset,
) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Err(ModelError::Dataset("cannot evaluate on an empty dataset".into()));
    }
    let preds = predict(spec, state, hooks, data)?;
    let correct = preds.iter().zip(data.labels()).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / data.len() as f64)
}
