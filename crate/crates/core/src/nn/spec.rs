//! Layer graph description and static shape propagation.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::ModelError;
use crate::tensor::StateDict;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "kebab-case")
)]
pub enum LayerKind {
    Linear,
    Conv2d,
    Relu,
    GlobalAvgPool,
    Flatten,
    ResidualBegin,
    ResidualAdd,
}

impl LayerKind {
    pub fn has_params(self) -> bool {
        matches!(self, LayerKind::Linear | LayerKind::Conv2d)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// `[weight, bias]` entry names for linear and conv2d layers, empty otherwise.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Vec::is_empty"))]
    pub params: Vec<String>,
    #[cfg_attr(feature = "serde", serde(default = "default_stride"))]
    pub stride: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub padding: usize,
}

#[cfg(feature = "serde")]
fn default_stride() -> usize {
    1
}

impl LayerSpec {
    fn bare(kind: LayerKind) -> Self {
        Self {
            kind,
            params: Vec::new(),
            stride: 1,
            padding: 0,
        }
    }

    /// Linear layer whose parameters are `{prefix}.weight` and `{prefix}.bias`.
    pub fn linear(prefix: &str) -> Self {
        Self {
            params: param_pair(prefix),
            ..Self::bare(LayerKind::Linear)
        }
    }

    pub fn conv2d(prefix: &str, stride: usize, padding: usize) -> Self {
        Self {
            kind: LayerKind::Conv2d,
            params: param_pair(prefix),
            stride,
            padding,
        }
    }

    pub fn relu() -> Self {
        Self::bare(LayerKind::Relu)
    }

    pub fn global_avg_pool() -> Self {
        Self::bare(LayerKind::GlobalAvgPool)
    }

    pub fn flatten() -> Self {
        Self::bare(LayerKind::Flatten)
    }

    pub fn residual_begin() -> Self {
        Self::bare(LayerKind::ResidualBegin)
    }

    pub fn residual_add() -> Self {
        Self::bare(LayerKind::ResidualAdd)
    }

    pub fn weight_name(&self) -> Option<&str> {
        self.params.first().map(String::as_str)
    }

    pub fn bias_name(&self) -> Option<&str> {
        self.params.get(1).map(String::as_str)
    }
}

fn param_pair(prefix: &str) -> Vec<String> {
    alloc::vec![format!("{prefix}.weight"), format!("{prefix}.bias")]
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelSpec {
    /// Per-sample input shape: `[features]` or `[channels, height, width]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Indices of layers that carry parameters (linear and conv2d).
    pub fn eligible_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind.has_params())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn has_residual(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l.kind, LayerKind::ResidualBegin | LayerKind::ResidualAdd))
    }

    /// Activation shape after every layer. Fails on the first layer whose
    /// parameters or input do not fit.
    pub fn infer_shapes(&self, state: &StateDict) -> Result<Vec<ActShape>, ModelError> {
        Ok(Plan::compile(self, state)?
            .ops
            .iter()
            .map(|op| op.out_shape)
            .collect())
    }

    pub fn output_shape(&self, state: &StateDict) -> Result<ActShape, ModelError> {
        Ok(Plan::compile(self, state)?.output)
    }
}

/// Per-sample activation shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActShape {
    Flat(usize),
    Spatial { c: usize, h: usize, w: usize },
}

impl ActShape {
    pub fn from_dims(dims: &[usize]) -> Option<Self> {
        match *dims {
            [f] if f > 0 => Some(ActShape::Flat(f)),
            [c, h, w] if c > 0 && h > 0 && w > 0 => Some(ActShape::Spatial { c, h, w }),
            _ => None,
        }
    }

    /// Length of the channel (or feature) axis.
    pub fn channels(self) -> usize {
        match self {
            ActShape::Flat(f) => f,
            ActShape::Spatial { c, .. } => c,
        }
    }

    /// Elements per channel.
    pub fn inner(self) -> usize {
        match self {
            ActShape::Flat(_) => 1,
            ActShape::Spatial { h, w, .. } => h * w,
        }
    }

    pub fn numel(self) -> usize {
        self.channels() * self.inner()
    }

    pub fn dims(self) -> Vec<usize> {
        match self {
            ActShape::Flat(f) => alloc::vec![f],
            ActShape::Spatial { c, h, w } => alloc::vec![c, h, w],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum OpKind {
    Linear { inp: usize, out: usize },
    Conv(ConvGeom),
    Relu,
    Gap,
    Flatten,
    ResBegin,
    ResAdd,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Op {
    pub kind: OpKind,
    /// State-dict entry indices of weight and bias.
    pub params: Option<(usize, usize)>,
    pub in_shape: ActShape,
    pub out_shape: ActShape,
}

/// A model spec resolved against a concrete state dict.
#[derive(Clone, Debug)]
pub(crate) struct Plan {
    pub input: ActShape,
    pub ops: Vec<Op>,
    pub output: ActShape,
}

fn mismatch(layer: usize, detail: impl Into<String>) -> ModelError {
    ModelError::ShapeMismatch {
        layer,
        detail: detail.into(),
    }
}

impl Plan {
    pub fn compile(spec: &ModelSpec, state: &StateDict) -> Result<Self, ModelError> {
        let input = ActShape::from_dims(&spec.input_shape).ok_or_else(|| ModelError::BadInputShape {
            shape: spec.input_shape.clone(),
        })?;
        let mut cur = input;
        let mut stack: Vec<(usize, ActShape)> = Vec::new();
        let mut ops = Vec::with_capacity(spec.layers.len());

        for (li, layer) in spec.layers.iter().enumerate() {
            let in_shape = cur;
            let mut params = None;
            let kind = match layer.kind {
                LayerKind::Linear | LayerKind::Conv2d => {
                    if layer.params.len() != 2 {
                        return Err(ModelError::BadParams {
                            layer: li,
                            detail: format!("expected [weight, bias], got {} names", layer.params.len()),
                        });
                    }
                    let lookup = |name: &str| {
                        state.index_of(name).ok_or_else(|| ModelError::MissingParam {
                            layer: li,
                            name: name.to_string(),
                        })
                    };
                    let wi = lookup(&layer.params[0])?;
                    let bi = lookup(&layer.params[1])?;
                    params = Some((wi, bi));
                    let wshape = state.entry(wi).1.shape();
                    let bshape = state.entry(bi).1.shape();
                    if layer.kind == LayerKind::Linear {
                        let [out, inp] = *wshape else {
                            return Err(mismatch(li, format!("linear weight must be 2-D, got {wshape:?}")));
                        };
                        let ActShape::Flat(f) = cur else {
                            return Err(mismatch(li, "linear layer needs a flat input"));
                        };
                        if f != inp {
                            return Err(mismatch(li, format!("input has {f} features, weight expects {inp}")));
                        }
                        if bshape != [out] {
                            return Err(mismatch(li, format!("bias shape {bshape:?}, expected [{out}]")));
                        }
                        cur = ActShape::Flat(out);
                        OpKind::Linear { inp, out }
                    } else {
                        let [cout, cin, kh, kw] = *wshape else {
                            return Err(mismatch(li, format!("conv2d weight must be 4-D, got {wshape:?}")));
                        };
                        let ActShape::Spatial { c, h, w } = cur else {
                            return Err(mismatch(li, "conv2d layer needs a spatial input"));
                        };
                        if c != cin {
                            return Err(mismatch(li, format!("input has {c} channels, weight expects {cin}")));
                        }
                        if bshape != [cout] {
                            return Err(mismatch(li, format!("bias shape {bshape:?}, expected [{cout}]")));
                        }
                        let stride = layer.stride;
                        let pad = layer.padding;
                        if stride == 0 {
                            return Err(mismatch(li, "stride must be at least 1"));
                        }
                        if h + 2 * pad < kh || w + 2 * pad < kw {
                            return Err(mismatch(li, "kernel larger than padded input"));
                        }
                        let ho = (h + 2 * pad - kh) / stride + 1;
                        let wo = (w + 2 * pad - kw) / stride + 1;
                        cur = ActShape::Spatial { c: cout, h: ho, w: wo };
                        OpKind::Conv(ConvGeom {
                            cin,
                            cout,
                            h,
                            w,
                            kh,
                            kw,
                            stride,
                            pad,
                            ho,
                            wo,
                        })
                    }
                }
                LayerKind::Relu => OpKind::Relu,
                LayerKind::GlobalAvgPool => {
                    let ActShape::Spatial { c, .. } = cur else {
                        return Err(mismatch(li, "global-avg-pool needs a spatial input"));
                    };
                    cur = ActShape::Flat(c);
                    OpKind::Gap
                }
                LayerKind::Flatten => {
                    cur = ActShape::Flat(cur.numel());
                    OpKind::Flatten
                }
                LayerKind::ResidualBegin => {
                    stack.push((li, cur));
                    OpKind::ResBegin
                }
                LayerKind::ResidualAdd => {
                    let (_, saved) = stack.pop().ok_or(ModelError::UnmatchedResidual { layer: li })?;
                    if saved != cur {
                        return Err(mismatch(
                            li,
                            format!("residual branch shape {cur:?} differs from skip shape {saved:?}"),
                        ));
                    }
                    OpKind::ResAdd
                }
            };
            if !layer.kind.has_params() && !layer.params.is_empty() {
                return Err(ModelError::BadParams {
                    layer: li,
                    detail: "parameter-free layer lists parameters".into(),
                });
            }
            ops.push(Op {
                kind,
                params,
                in_shape,
                out_shape: cur,
            });
        }
        if let Some((li, _)) = stack.pop() {
            return Err(ModelError::UnmatchedResidual { layer: li });
        }
        Ok(Self {
            input,
            ops,
            output: cur,
        })
    }
}
