//! Experiment configuration, read from TOML.
//!
//! ```toml
//! models = ["mlp", "micro-resnet"]
//! payload_sizes = [100]
//! seeds = [0, 1, 2]
//! train_seed = 0
//!
//! [scheme]
//! kind = "spread"
//! gain = 0.45
//! chips_per_bit = 24
//!
//! [[defenses]]
//! kind = "shuffle"
//! fraction = 1.0
//!
//! [[defenses]]
//! kind = "prune"
//! rate = 0.25
//!
//! [sweep]
//! model = "micro-resnet"
//! payload_size = 100
//! fractions = [0.0, 0.5, 1.0]
//! seeds = [0, 1]
//!
//! [timing]
//! trials = 30
//! ```

use nnperm_core::nn::ModelKind;
use nnperm_core::stego::{DecodeMode, LdpcCode, Scheme, SpreadParams, DEFAULT_CHIPS_PER_BIT, DEFAULT_GAIN};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown model {0:?} (expected mlp or micro-resnet)")]
    UnknownModel(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub models: Vec<String>,
    pub payload_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train_seed: u64,
    /// Seed of the synthetic dataset.
    #[serde(default)]
    pub data_seed: u64,
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub defenses: Vec<DefenseConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub timing: Option<TimingConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SchemeConfig {
    Lsb {
        #[serde(default = "one")]
        n_bits: u8,
    },
    Spread {
        #[serde(default = "default_gain")]
        gain: f64,
        #[serde(default = "default_chips")]
        chips_per_bit: usize,
        #[serde(default = "default_n")]
        ldpc_n: usize,
        #[serde(default = "default_k")]
        ldpc_k: usize,
        #[serde(default)]
        code_seed: u64,
        #[serde(default)]
        decode: DecodeMode,
    },
}

fn one() -> u8 {
    1
}
fn default_gain() -> f64 {
    DEFAULT_GAIN
}
fn default_chips() -> usize {
    DEFAULT_CHIPS_PER_BIT
}
fn default_n() -> usize {
    256
}
fn default_k() -> usize {
    128
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig::Spread {
            gain: DEFAULT_GAIN,
            chips_per_bit: DEFAULT_CHIPS_PER_BIT,
            ldpc_n: default_n(),
            ldpc_k: default_k(),
            code_seed: 0,
            decode: DecodeMode::Soft,
        }
    }
}

impl SchemeConfig {
    /// The scheme with its chip seed set to `seed`.
    pub fn build(&self, seed: u64) -> Result<Scheme, ConfigError> {
        match *self {
            SchemeConfig::Lsb { n_bits } => {
                if !(1..=8).contains(&n_bits) {
                    return Err(ConfigError::Invalid(format!("n_bits must be 1..=8, got {n_bits}")));
                }
                Ok(Scheme::Lsb { n_bits })
            }
            SchemeConfig::Spread {
                gain,
                chips_per_bit,
                ldpc_n,
                ldpc_k,
                code_seed,
                decode,
            } => {
                let code = LdpcCode::new(ldpc_n, ldpc_k, code_seed).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                if ldpc_k % 8 != 0 {
                    return Err(ConfigError::Invalid(format!("ldpc_k must be a multiple of 8, got {ldpc_k}")));
                }
                let params =
                    SpreadParams::new(seed, gain, chips_per_bit).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(Scheme::Spread {
                    code,
                    params,
                    mode: decode,
                })
            }
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            SchemeConfig::Lsb { n_bits } => format!("lsb(n_bits={n_bits})"),
            SchemeConfig::Spread {
                gain,
                chips_per_bit,
                ldpc_n,
                ldpc_k,
                code_seed,
                decode,
            } => {
                let d = match decode {
                    DecodeMode::Soft => "soft",
                    DecodeMode::Hard => "hard",
                };
                format!("spread(gain={gain},L={chips_per_bit},n={ldpc_n},k={ldpc_k},code_seed={code_seed},{d})")
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DefenseConfig {
    None,
    Shuffle {
        #[serde(default = "full")]
        fraction: f64,
    },
    Cascade,
    Prune {
        rate: f64,
    },
    Retrain {
        epochs: usize,
        /// Defaults to the model's training learning rate.
        #[serde(default)]
        lr: Option<f64>,
    },
}

fn full() -> f64 {
    1.0
}

impl DefenseConfig {
    /// Row label used in tables.
    pub fn label(&self) -> String {
        match *self {
            DefenseConfig::None => "None".into(),
            DefenseConfig::Shuffle { fraction } if fraction == 1.0 => "Weight Shuffling".into(),
            DefenseConfig::Shuffle { fraction } => format!("Weight Shuffling={fraction}"),
            DefenseConfig::Cascade => "Cascaded Shuffling".into(),
            DefenseConfig::Prune { rate } => format!("Pruning={rate}"),
            DefenseConfig::Retrain { epochs, .. } => format!("Retraining={epochs}"),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DefenseConfig::None => "none",
            DefenseConfig::Shuffle { .. } => "shuffle",
            DefenseConfig::Cascade => "cascade",
            DefenseConfig::Prune { .. } => "prune",
            DefenseConfig::Retrain { .. } => "retrain",
        }
    }

    /// The numeric parameter, empty for parameterless defenses.
    pub fn param(&self) -> String {
        match *self {
            DefenseConfig::None | DefenseConfig::Cascade => String::new(),
            DefenseConfig::Shuffle { fraction } => fraction.to_string(),
            DefenseConfig::Prune { rate } => rate.to_string(),
            DefenseConfig::Retrain { epochs, .. } => epochs.to_string(),
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        match *self {
            DefenseConfig::Shuffle { fraction } if !(0.0..=1.0).contains(&fraction) => {
                Err(ConfigError::Invalid(format!("shuffle fraction must be in [0, 1], got {fraction}")))
            }
            DefenseConfig::Prune { rate } if !(0.0..1.0).contains(&rate) => {
                Err(ConfigError::Invalid(format!("prune rate must be in [0, 1), got {rate}")))
            }
            DefenseConfig::Retrain { epochs: 0, .. } => Err(ConfigError::Invalid("retrain epochs must be at least 1".into())),
            DefenseConfig::Retrain { lr: Some(lr), .. } if !(lr > 0.0 && lr.is_finite()) => {
                Err(ConfigError::Invalid(format!("retrain lr must be positive, got {lr}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub model: String,
    pub payload_size: usize,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub trials: usize,
    #[serde(default = "full")]
    pub fraction: f64,
}

pub fn parse_model(name: &str) -> Result<ModelKind, ConfigError> {
    ModelKind::parse(name).ok_or_else(|| ConfigError::UnknownModel(name.into()))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn model_kinds(&self) -> Result<Vec<ModelKind>, ConfigError> {
        self.models.iter().map(|m| parse_model(m)).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.models.is_empty() {
            return Err(ConfigError::Invalid("models must not be empty".into()));
        }
        self.model_kinds()?;
        if self.payload_sizes.contains(&0) {
            return Err(ConfigError::Invalid("payload sizes must be positive".into()));
        }
        self.scheme.build(0)?;
        for d in &self.defenses {
            d.validate()?;
        }
        if let Some(s) = &self.sweep {
            parse_model(&s.model)?;
            if s.payload_size == 0 {
                return Err(ConfigError::Invalid("sweep payload size must be positive".into()));
            }
            if let Some(f) = s.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
                return Err(ConfigError::Invalid(format!("sweep fraction {f} outside [0, 1]")));
            }
        }
        if let Some(t) = &self.timing {
            if t.trials < 30 {
                return Err(ConfigError::Invalid(format!("timing needs at least 30 trials, got {}", t.trials)));
            }
            if !(0.0..=1.0).contains(&t.fraction) {
                return Err(ConfigError::Invalid(format!("timing fraction {} outside [0, 1]", t.fraction)));
            }
        }
        Ok(())
    }
}
