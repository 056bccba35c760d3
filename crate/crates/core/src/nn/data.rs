use alloc::format;
use alloc::vec::Vec;

use super::ModelError;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

pub const TRAIN_SIZE: usize = 2000;
pub const TEST_SIZE: usize = 500;

/// Pixel noise standard deviation of the synthetic images.
const NOISE: f64 = 0.3;

/// Blob-pair orientations, `(row, col)` steps: horizontal, vertical and the
/// two diagonals.
const DIRECTIONS: [(f64, f64); 4] = [(0.0, 1.0), (1.0, 0.0), (1.0, 1.0), (1.0, -1.0)];

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[N, ...sample_shape]`.
    inputs: Tensor,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self, ModelError> {
        if inputs.rank() < 2 {
            return Err(ModelError::Dataset("inputs need a leading sample axis".into()));
        }
        if inputs.shape()[0] != labels.len() {
            return Err(ModelError::Dataset(format!(
                "{} samples but {} labels",
                inputs.shape()[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(ModelError::Dataset(format!(
                "label {bad} not below class count {class_count}"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn sample_len(&self) -> usize {
        self.inputs.len() / self.labels.len().max(1)
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let k = self.sample_len();
        &self.inputs.data()[i * k..(i + 1) * k]
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }
}

/// `count` 8×8 single-channel images of two Gaussian blobs whose relative
/// orientation is the class (4 classes), plus pixel noise.
pub fn blob_pairs(seed: u64, stream: &str, count: usize) -> Dataset {
    let mut rng = SplitMix64::for_stream(seed, stream);
    let mut pixels = Vec::with_capacity(count * 64);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let label = rng.below(4) as usize;
        let (dr, dc) = DIRECTIONS[label];
        let sep = rng.uniform(3.0, 4.0) / libm::sqrt(dr * dr + dc * dc);
        let mr = rng.uniform(2.5, 4.5);
        let mc = rng.uniform(2.5, 4.5);
        let centers = [
            (mr - dr * sep / 2.0, mc - dc * sep / 2.0),
            (mr + dr * sep / 2.0, mc + dc * sep / 2.0),
        ];
        let s = rng.uniform(0.7, 1.0);
        let denom = 2.0 * s * s;
        for i in 0..8 {
            for j in 0..8 {
                let mut v = 0.0;
                for &(cr, cc) in &centers {
                    let (a, b) = (i as f64 - cr, j as f64 - cc);
                    v += libm::exp(-(a * a + b * b) / denom);
                }
                v += NOISE * rng.gaussian();
                pixels.push(v as f32);
            }
        }
        labels.push(label);
    }
    let inputs = Tensor::new(alloc::vec![count, 1, 8, 8], pixels).expect("count > 0");
    Dataset::new(inputs, labels, 4).expect("labels below 4")
}

/// The standard split: 2000 training and 500 test images from one seed.
pub fn synthetic_split(seed: u64) -> (Dataset, Dataset) {
    (
        blob_pairs(seed, "data.train", TRAIN_SIZE),
        blob_pairs(seed, "data.test", TEST_SIZE),
    )
}
