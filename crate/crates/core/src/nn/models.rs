use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{LayerSpec, ModelSpec};
use crate::rng::SplitMix64;
use crate::tensor::{StateDict, Tensor};

pub const INPUT_SHAPE: [usize; 3] = [1, 8, 8];
pub const CLASSES: usize = 4;
pub const MICRO_RESNET_CHANNELS: usize = 64;

/// The two built-in architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Flatten, then 64→32→16→4 with relus.
    Mlp,
    /// Stride-2 conv stem, two residual blocks of 3×3 convs, global average
    /// pooling and a linear head.
    MicroResNet,
}

impl ModelKind {
    pub const ALL: [ModelKind; 2] = [ModelKind::Mlp, ModelKind::MicroResNet];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::MicroResNet => "micro-resnet",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn spec(self) -> ModelSpec {
        let layers = match self {
            ModelKind::Mlp => vec![
                LayerSpec::flatten(),
                LayerSpec::linear("fc1"),
                LayerSpec::relu(),
                LayerSpec::linear("fc2"),
                LayerSpec::relu(),
                LayerSpec::linear("fc3"),
            ],
            ModelKind::MicroResNet => {
                let mut l = vec![LayerSpec::conv2d("stem", 2, 1), LayerSpec::relu()];
                for b in 1..=2 {
                    l.push(LayerSpec::residual_begin());
                    l.push(LayerSpec::conv2d(&format!("block{b}.conv1"), 1, 1));
                    l.push(LayerSpec::relu());
                    l.push(LayerSpec::conv2d(&format!("block{b}.conv2"), 1, 1));
                    l.push(LayerSpec::residual_add());
                }
                l.push(LayerSpec::global_avg_pool());
                l.push(LayerSpec::linear("head"));
                l
            }
        };
        ModelSpec {
            input_shape: INPUT_SHAPE.to_vec(),
            layers,
        }
    }

    /// Parameter shapes in state-dict order.
    pub fn param_shapes(self) -> Vec<(alloc::string::String, Vec<usize>)> {
        let c = MICRO_RESNET_CHANNELS;
        let mut out = Vec::new();
        let mut push = |prefix: &str, w: Vec<usize>| {
            let bias = vec![w[0]];
            out.push((format!("{prefix}.weight"), w));
            out.push((format!("{prefix}.bias"), bias));
        };
        match self {
            ModelKind::Mlp => {
                push("fc1", vec![32, 64]);
                push("fc2", vec![16, 32]);
                push("fc3", vec![CLASSES, 16]);
            }
            ModelKind::MicroResNet => {
                push("stem", vec![c, 1, 3, 3]);
                for b in 1..=2 {
                    push(&format!("block{b}.conv1"), vec![c, c, 3, 3]);
                    push(&format!("block{b}.conv2"), vec![c, c, 3, 3]);
                }
                push("head", vec![CLASSES, c]);
            }
        }
        out
    }

    /// Kaiming-normal weights (std `sqrt(2 / fan_in)`) and zero biases, each
    /// tensor from its own named stream of `seed`.
    pub fn init(self, seed: u64) -> StateDict {
        let mut state = StateDict::new();
        for (name, shape) in self.param_shapes() {
            let len: usize = shape.iter().product();
            let tensor = if shape.len() == 1 {
                Tensor::zeros(shape).expect("nonzero extents")
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let std = libm::sqrt(2.0 / fan_in as f64);
                let mut rng = SplitMix64::for_stream(seed, &format!("init.{name}"));
                let data = (0..len).map(|_| (rng.gaussian() * std) as f32).collect();
                Tensor::new(shape, data).expect("length matches")
            };
            state.insert(name, tensor).expect("unique names");
        }
        state
    }

    /// Default `(epochs, learning rate)` for training from scratch.
    pub fn training_defaults(self) -> (usize, f64) {
        match self {
            ModelKind::Mlp => (30, 0.05),
            ModelKind::MicroResNet => (15, 0.03),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ActShape;

    #[test]
    fn shapes_propagate() {
        for kind in ModelKind::ALL {
            let state = kind.init(0);
            let spec = kind.spec();
            assert_eq!(spec.output_shape(&state).unwrap(), ActShape::Flat(CLASSES));
            assert_eq!(ModelKind::parse(kind.name()), Some(kind));
        }
        let c = MICRO_RESNET_CHANNELS;
        let expected = (c * 9 + c) + 4 * (c * c * 9 + c) + (CLASSES * c + CLASSES);
        assert_eq!(ModelKind::MicroResNet.init(0).element_count(), expected);
        assert!(expected >= 30_000);
    }

    #[test]
    fn init_is_seeded() {
        let a = ModelKind::Mlp.init(1);
        assert_eq!(a, ModelKind::Mlp.init(1));
        assert_ne!(a, ModelKind::Mlp.init(2));
        let names: Vec<&str> = a.names().collect();
        assert_eq!(names, ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias", "fc3.weight", "fc3.bias"]);
    }
}
