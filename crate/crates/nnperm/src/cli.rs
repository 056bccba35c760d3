//! The `nnperm` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 integrity or
//! equivalence failure, 3 internal error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nnperm_core::defense::{
    cascade_permute, hooks_for, permute_model, prune_global, random_inputs, retrain_defense, verify_equivalence,
    DefenseError,
};
use nnperm_core::metrics::{accuracy_quotient, payload_integrity, IntegrityReport};
use nnperm_core::nn::{evaluate_accuracy, synthetic_split, train_sgd, HookSet, ModelError, ModelKind};
use nnperm_core::stego::{capacity, CapacityScheme, DecodeMode, Payload, Scheme, StegoError};

use crate::config::{ConfigError, ExperimentConfig, SchemeConfig};
use crate::formats::{self, FormatError};
use crate::harness::{run_experiment_matrix, summarize_sweep, write_outputs, HarnessError};

#[derive(Debug, Parser)]
#[command(name = "nnperm", version, about = "Neural-network weight steganography and the permutation defense")]
pub struct Cli {
    /// More detail in reports (per-chunk verdicts).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a desk-scale model on the synthetic blob dataset.
    Train {
        #[arg(long, value_parser = parse_kind)]
        model: ModelKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        data_seed: u64,
        /// Defaults to the model's standard schedule.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Model spec output; defaults to the checkpoint path with a `.spec.toml` extension.
        #[arg(long)]
        spec_out: Option<PathBuf>,
    },
    /// Hide a payload file in a checkpoint.
    Embed {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        payload: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        scheme: SchemeArgs,
    },
    /// Recover a payload and report its integrity.
    Extract {
        #[arg(long)]
        input: PathBuf,
        /// Where to write the recovered payload.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Known payload, for true bit error rates.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[command(flatten)]
        scheme: SchemeArgs,
    },
    /// Shuffle channels of a fraction of layers and write the manifest.
    Permute {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Compensate each permutation in the next layer, leaving one hook.
        #[arg(long, conflicts_with = "fraction")]
        cascade: bool,
    },
    /// Zero the smallest-magnitude weights.
    Prune {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fraction of weight elements to zero, in [0, 1).
        #[arg(long)]
        rate: f64,
    },
    /// Continue training on the synthetic dataset.
    Retrain {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: usize,
        #[arg(long, default_value_t = 0.03)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        data_seed: u64,
    },
    /// Compare a defended model (with its manifest's hooks) to the original.
    VerifyEquivalence {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        defended: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Number of random inputs.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an experiment configuration and write results.csv, table1.md,
    /// fig3.csv and table2.md.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Report embedding capacity of a checkpoint.
    Capacity {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        scheme: SchemeArgs,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SchemeKind {
    Lsb,
    Spread,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DecodeArg {
    Soft,
    Hard,
}

#[derive(Debug, Args)]
pub struct SchemeArgs {
    #[arg(long, value_enum, default_value_t = SchemeKind::Spread)]
    pub scheme: SchemeKind,
    /// LSB: low bits replaced per weight (1-8).
    #[arg(long, default_value_t = 1)]
    pub n_bits: u8,
    /// Spread spectrum: chip amplitude as a fraction of the layer's weight standard deviation.
    #[arg(long, default_value_t = nnperm_core::stego::DEFAULT_GAIN)]
    pub gain: f64,
    /// Spread spectrum: weights per coded bit.
    #[arg(long, default_value_t = nnperm_core::stego::DEFAULT_CHIPS_PER_BIT)]
    pub chips_per_bit: usize,
    #[arg(long, default_value_t = 256)]
    pub ldpc_n: usize,
    #[arg(long, default_value_t = 128)]
    pub ldpc_k: usize,
    #[arg(long, default_value_t = 0)]
    pub code_seed: u64,
    #[arg(long, value_enum, default_value_t = DecodeArg::Soft)]
    pub decode: DecodeArg,
    /// Chip sequence seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SchemeArgs {
    fn config(&self) -> SchemeConfig {
        match self.scheme {
            SchemeKind::Lsb => SchemeConfig::Lsb { n_bits: self.n_bits },
            SchemeKind::Spread => SchemeConfig::Spread {
                gain: self.gain,
                chips_per_bit: self.chips_per_bit,
                ldpc_n: self.ldpc_n,
                ldpc_k: self.ldpc_k,
                code_seed: self.code_seed,
                decode: match self.decode {
                    DecodeArg::Soft => DecodeMode::Soft,
                    DecodeArg::Hard => DecodeMode::Hard,
                },
            },
        }
    }

    fn build(&self) -> Result<Scheme, CliError> {
        Ok(self.config().build(self.seed)?)
    }
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    ModelKind::parse(s).ok_or_else(|| format!("unknown model {s:?} (expected mlp or micro-resnet)"))
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Integrity(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Integrity(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Integrity(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Encode(_) | FormatError::Serialize(_) => CliError::Internal(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<StegoError> for CliError {
    fn from(e: StegoError) -> Self {
        match e {
            StegoError::NoPayloadDetected | StegoError::Integrity { .. } => CliError::Integrity(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<DefenseError> for CliError {
    fn from(e: DefenseError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(e) => e.into(),
            HarnessError::Model(e) => e.into(),
            HarnessError::Defense(e) => e.into(),
            HarnessError::Stego(e) => e.into(),
            HarnessError::Format(e) => e.into(),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Reports go to `out`, errors to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}

fn spec_path_for(out: &Path) -> PathBuf {
    out.with_extension("spec.toml")
}

fn verdict(recovered: bool) -> &'static str {
    if recovered {
        "recovered"
    } else {
        "corrupted ✓"
    }
}

fn write_report(out: &mut dyn Write, r: &IntegrityReport, verbose: u8) -> std::io::Result<()> {
    let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6}"));
    if r.detected {
        writeln!(out, "verdict: {}", verdict(r.recovered))?;
    } else {
        writeln!(out, "verdict: no payload detected")?;
    }
    writeln!(out, "recovered: {}", r.recovered)?;
    writeln!(out, "detected: {}", r.detected)?;
    writeln!(out, "recovered_bytes: {}", r.recovered_bytes)?;
    writeln!(out, "raw_ber: {}", f(r.raw_ber))?;
    if r.true_ber.is_some() {
        writeln!(out, "channel_ber: {}", f(r.channel_ber))?;
        writeln!(out, "true_ber: {}", f(r.true_ber))?;
    }
    let ok = r.per_chunk.iter().filter(|c| c.crc_ok).count();
    writeln!(out, "chunks: {} ({} crc ok)", r.per_chunk.len(), ok)?;
    if verbose > 0 {
        for c in &r.per_chunk {
            let ldpc = match c.ldpc_converged {
                Some(true) => "converged",
                Some(false) => "not converged",
                None => "-",
            };
            writeln!(out, "  chunk {}: crc {}, ldpc {ldpc}", c.index, if c.crc_ok { "ok" } else { "bad" })?;
        }
    }
    Ok(())
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Train {
            model,
            seed,
            data_seed,
            epochs,
            lr,
            out: path,
            spec_out,
        } => {
            let (train, test) = synthetic_split(*data_seed);
            let (e0, lr0) = model.training_defaults();
            let spec = model.spec();
            let state = train_sgd(&spec, &model.init(*seed), &train, epochs.unwrap_or(e0), lr.unwrap_or(lr0), *seed)?;
            let acc = evaluate_accuracy(&spec, &state, &HookSet::new(), &test)?;
            let spec_path = spec_out.clone().unwrap_or_else(|| spec_path_for(path));
            formats::save_state(path, &state)?;
            formats::save_spec(&spec_path, &spec)?;
            writeln!(out, "model: {}", model.name())?;
            writeln!(out, "test_accuracy: {acc:.4}")?;
            writeln!(out, "checkpoint: {}", path.display())?;
            writeln!(out, "spec: {}", spec_path.display())?;
        }
        Command::Embed {
            input,
            payload,
            out: path,
            scheme,
        } => {
            let state = formats::load_state(input)?;
            let bytes = formats::read_bytes(payload)?;
            let p = Payload::new(bytes);
            let s = scheme.build()?;
            let infected = s.embed(&state, &p)?;
            formats::save_state(path, &infected)?;
            writeln!(out, "scheme: {}", scheme.config().describe())?;
            writeln!(out, "payload_bytes: {}", p.len())?;
            writeln!(out, "payload_crc32: {:08x}", p.checksum())?;
            writeln!(out, "checkpoint: {}", path.display())?;
        }
        Command::Extract {
            input,
            out: path,
            truth,
            scheme,
        } => {
            let state = formats::load_state(input)?;
            let s = scheme.build()?;
            let ex = s.extract(&state)?;
            let report = match truth {
                Some(t) => {
                    let p = Payload::new(formats::read_bytes(t)?);
                    let stats = s.truth_stats(&state, &p);
                    match stats {
                        Ok(stats) => payload_integrity(&ex, Some((&p, stats))),
                        // The known payload does not fit this layout at all.
                        Err(StegoError::Capacity { .. }) => payload_integrity(&ex, None),
                        Err(e) => return Err(e.into()),
                    }
                }
                None => payload_integrity(&ex, None),
            };
            write_report(out, &report, cli.verbose)?;
            if !ex.detected {
                return Err(CliError::Integrity("no payload detected".into()));
            }
            if !report.recovered {
                return Err(CliError::Integrity("payload integrity check failed".into()));
            }
            if let (Some(path), Some(bytes)) = (path, &ex.payload) {
                formats::write_bytes(path, bytes)?;
                writeln!(out, "payload: {}", path.display())?;
            }
        }
        Command::Permute {
            input,
            spec,
            out: path,
            manifest,
            fraction,
            seed,
            cascade,
        } => {
            let state = formats::load_state(input)?;
            let spec = formats::load_spec(spec)?;
            let (permuted, hooks, m) = if *cascade {
                cascade_permute(&spec, &state, *seed)?
            } else {
                permute_model(&spec, &state, *fraction, *seed)?
            };
            formats::save_state(path, &permuted)?;
            formats::save_manifest(manifest, &m)?;
            writeln!(out, "mode: {}", if *cascade { "cascaded" } else { "hooked" })?;
            writeln!(out, "permuted_layers: {:?}", m.permuted_layers())?;
            writeln!(out, "hooks: {:?}", hooks.layers().collect::<Vec<_>>())?;
            writeln!(out, "fraction_realized: {}", m.fraction_realized)?;
            writeln!(out, "weighted_element_fraction: {:.6}", m.weighted_element_fraction)?;
            writeln!(out, "checkpoint: {}", path.display())?;
            writeln!(out, "manifest: {}", manifest.display())?;
        }
        Command::Prune { input, out: path, rate } => {
            let state = formats::load_state(input)?;
            let pruned = prune_global(&state, *rate)?;
            formats::save_state(path, &pruned)?;
            writeln!(out, "rate: {rate}")?;
            writeln!(out, "checkpoint: {}", path.display())?;
        }
        Command::Retrain {
            input,
            spec,
            out: path,
            epochs,
            lr,
            seed,
            data_seed,
        } => {
            let state = formats::load_state(input)?;
            let spec = formats::load_spec(spec)?;
            let (train, test) = synthetic_split(*data_seed);
            let none = HookSet::new();
            let before = evaluate_accuracy(&spec, &state, &none, &test)?;
            let retrained = retrain_defense(&spec, &state, &train, *epochs, *lr, *seed)?;
            let after = evaluate_accuracy(&spec, &retrained, &none, &test)?;
            formats::save_state(path, &retrained)?;
            writeln!(out, "accuracy_before: {before:.4}")?;
            writeln!(out, "accuracy_after: {after:.4}")?;
            match accuracy_quotient(before, after) {
                Ok(q) => writeln!(out, "accuracy_quotient: {q:.4}")?,
                Err(_) => writeln!(out, "accuracy_quotient: undefined")?,
            }
            writeln!(out, "checkpoint: {}", path.display())?;
        }
        Command::VerifyEquivalence {
            spec,
            original,
            defended,
            manifest,
            trials,
            seed,
        } => {
            if *trials == 0 {
                return Err(CliError::Usage("--trials must be at least 1".into()));
            }
            let spec = formats::load_spec(spec)?;
            let a = formats::load_state(original)?;
            let b = formats::load_state(defended)?;
            let hooks = match manifest {
                Some(p) => hooks_for(&formats::load_manifest(p)?)
                    .map_err(|e| CliError::Integrity(format!("manifest does not apply: {e}")))?,
                None => HookSet::new(),
            };
            let x = random_inputs(&spec, *trials, *seed);
            let eq = match verify_equivalence(&spec, &a, &b, &hooks, &x, *trials) {
                Ok(eq) => eq,
                Err(DefenseError::Model(ModelError::BadHook { layer, detail })) => {
                    writeln!(out, "equivalent: false")?;
                    return Err(CliError::Integrity(format!("manifest hook on layer {layer}: {detail}")));
                }
                Err(e) => return Err(e.into()),
            };
            writeln!(out, "samples: {}", eq.samples)?;
            writeln!(out, "max_abs_diff: {:e}", eq.max_abs_diff)?;
            writeln!(out, "bitwise_equal: {}", eq.bitwise)?;
            writeln!(out, "equivalent: {}", eq.bitwise)?;
            if !eq.bitwise {
                return Err(CliError::Integrity(format!(
                    "outputs differ, max abs diff {:e}",
                    eq.max_abs_diff
                )));
            }
        }
        Command::Sweep { config, out_dir } => {
            let text = formats::read_bytes(config)?;
            let cfg = ExperimentConfig::from_toml(&String::from_utf8_lossy(&text))
                .map_err(|e| CliError::Usage(format!("{}: {e}", config.display())))?;
            let result = run_experiment_matrix(&cfg)?;
            for (m, acc) in &result.model_accuracy {
                writeln!(out, "trained {m}: test_accuracy {acc:.4}")?;
            }
            writeln!(out, "cells: {}", result.records.len())?;
            if !result.sweep.is_empty() {
                let s = summarize_sweep(&result.sweep);
                for ((f, b), r) in s.fractions.iter().zip(&s.mean_true_ber).zip(&s.recovery_rate) {
                    writeln!(out, "sweep fraction {f}: mean_true_ber {b:.4}, recovered {r:.2}")?;
                }
                match s.spearman {
                    Some(rho) => writeln!(out, "sweep spearman: {rho:.4}")?,
                    None => writeln!(out, "sweep spearman: undefined")?,
                }
            }
            for p in write_outputs(out_dir, &cfg, &result)? {
                writeln!(out, "wrote {}", p.display())?;
            }
        }
        Command::Capacity { input, scheme } => {
            let state = formats::load_state(input)?;
            let s = scheme.build()?;
            let raw = match scheme.scheme {
                SchemeKind::Lsb => capacity(&state, CapacityScheme::Lsb { n_bits: scheme.n_bits }),
                SchemeKind::Spread => capacity(
                    &state,
                    CapacityScheme::Spread {
                        chips_per_bit: scheme.chips_per_bit,
                    },
                ),
            };
            let layers = s.layer_capacities(&state)?;
            let frame_bytes: usize = layers.iter().sum();
            let usable = layers
                .iter()
                .filter(|&&c| c > nnperm_core::stego::HEADER_LEN)
                .map(|c| c - nnperm_core::stego::HEADER_LEN)
                .sum::<usize>()
                .saturating_sub(nnperm_core::stego::TRAILER_LEN);
            writeln!(out, "scheme: {}", scheme.config().describe())?;
            writeln!(out, "raw_bits: {raw}")?;
            writeln!(out, "frame_bytes: {frame_bytes}")?;
            writeln!(out, "max_payload_bytes: {usable}")?;
            writeln!(out, "layer_frame_bytes: {layers:?}")?;
        }
    }
    Ok(())
}
