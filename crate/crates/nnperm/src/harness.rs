//! Experiment orchestration: the defense grid, the partial-permutation
//! sweep and timing profiles, plus their CSV and markdown outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nnperm_core::defense::{
    cascade_permute, permute_model, prune_global, random_inputs, retrain_defense, DefenseError,
};
use nnperm_core::metrics::{accuracy_quotient, payload_integrity, spearman, IntegrityReport, MetricsError};
use nnperm_core::nn::{
    evaluate_accuracy, forward_batch, synthetic_split, train_sgd, Dataset, HookSet, ModelError, ModelKind, ModelSpec,
};
use nnperm_core::rng::{indexed_stream_seed, SplitMix64};
use nnperm_core::stego::{Payload, StegoError};
use nnperm_core::{read_checkpoint, write_checkpoint, StateDict};
use thiserror::Error;

use crate::config::{ConfigError, DefenseConfig, ExperimentConfig, SchemeConfig};
use crate::formats::{write_bytes, FormatError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Defense(#[from] DefenseError),
    #[error(transparent)]
    Stego(#[from] StegoError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("timing needs at least 30 trials, got {0}")]
    TooFewTrials(usize),
}

/// A model trained on the synthetic data, with the data it used.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub spec: ModelSpec,
    pub state: StateDict,
    pub train: Dataset,
    pub test: Dataset,
    pub accuracy: f64,
}

/// Trains `kind` with its default epochs and learning rate.
pub fn train_model(kind: ModelKind, train_seed: u64, data_seed: u64) -> Result<TrainedModel, HarnessError> {
    let (train, test) = synthetic_split(data_seed);
    let spec = kind.spec();
    let (epochs, lr) = kind.training_defaults();
    let state = train_sgd(&spec, &kind.init(train_seed), &train, epochs, lr, train_seed)?;
    let accuracy = evaluate_accuracy(&spec, &state, &HookSet::new(), &test)?;
    Ok(TrainedModel {
        kind,
        spec,
        state,
        train,
        test,
        accuracy,
    })
}

/// Seeded pseudo-random payload bytes.
pub fn make_payload(size: usize, seed: u64) -> Payload {
    let mut rng = SplitMix64::for_indexed_stream(seed, "payload", size as u64);
    Payload::new((0..size).map(|_| rng.next_u64() as u8).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellStatus {
    Ok,
    /// The payload did not fit the model; no other fields are meaningful.
    Capacity,
}

/// How much of the model a shuffle touched.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShuffleExtent {
    pub fraction_realized: f64,
    pub weighted_element_fraction: f64,
}

/// Wall-clock medians of one timing profile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Timings {
    pub trials: usize,
    pub load_ms: f64,
    /// Permutation plus hook construction.
    pub permute_ms: f64,
    pub forward_us: f64,
    pub hooked_forward_us: f64,
    /// Paired hooked minus plain time; see [`timing_profile`].
    pub hook_delta_us: f64,
}

impl Timings {
    pub fn overhead_pct(&self) -> f64 {
        100.0 * self.hook_delta_us / self.forward_us
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRecord {
    pub model: String,
    pub payload_size: usize,
    pub scheme: String,
    pub defense: DefenseConfig,
    pub seed: u64,
    pub status: CellStatus,
    /// Accuracy of the trained model before embedding.
    pub accuracy_clean: f64,
    /// Accuracy of the infected model, before the defense.
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub accuracy_quotient: f64,
    pub integrity: Option<IntegrityReport>,
    pub shuffle: Option<ShuffleExtent>,
    /// Only filled by timing runs; never written to the results CSV.
    pub timings: Option<Timings>,
}

impl ExperimentRecord {
    pub fn recovered(&self) -> Option<bool> {
        self.integrity.as_ref().map(|i| i.recovered)
    }
}

/// Embeds a seeded payload, applies one defense and measures the outcome.
///
/// The payload and chip sequence depend only on `seed`, so every defense
/// sees the same infected model. Defense randomness comes from a stream
/// keyed by the cell coordinates.
pub fn run_cell(
    model: &TrainedModel,
    scheme: &SchemeConfig,
    payload_size: usize,
    defense: &DefenseConfig,
    seed: u64,
) -> Result<ExperimentRecord, HarnessError> {
    let built = scheme.build(seed)?;
    let payload = make_payload(payload_size, seed);
    let mut record = ExperimentRecord {
        model: model.kind.name().into(),
        payload_size,
        scheme: scheme.describe(),
        defense: *defense,
        seed,
        status: CellStatus::Ok,
        accuracy_clean: model.accuracy,
        accuracy_before: f64::NAN,
        accuracy_after: f64::NAN,
        accuracy_quotient: f64::NAN,
        integrity: None,
        shuffle: None,
        timings: None,
    };
    let infected = match built.embed(&model.state, &payload) {
        Ok(s) => s,
        Err(StegoError::Capacity { .. }) => {
            record.status = CellStatus::Capacity;
            return Ok(record);
        }
        Err(e) => return Err(e.into()),
    };
    let no_hooks = HookSet::new();
    let before = evaluate_accuracy(&model.spec, &infected, &no_hooks, &model.test)?;
    let cell_seed = indexed_stream_seed(
        seed,
        &format!("cell/{}/{}/{}", model.kind.name(), payload_size, defense.label()),
        0,
    );
    let (defended, hooks) = match *defense {
        DefenseConfig::None => (infected, HookSet::new()),
        DefenseConfig::Shuffle { fraction } => {
            let (s, h, m) = permute_model(&model.spec, &infected, fraction, cell_seed)?;
            record.shuffle = Some(ShuffleExtent {
                fraction_realized: m.fraction_realized,
                weighted_element_fraction: m.weighted_element_fraction,
            });
            (s, h)
        }
        DefenseConfig::Cascade => {
            let (s, h, _) = cascade_permute(&model.spec, &infected, cell_seed)?;
            (s, h)
        }
        DefenseConfig::Prune { rate } => (prune_global(&infected, rate)?, HookSet::new()),
        DefenseConfig::Retrain { epochs, lr } => {
            let lr = lr.unwrap_or(model.kind.training_defaults().1);
            let s = retrain_defense(&model.spec, &infected, &model.train, epochs, lr, cell_seed)?;
            (s, HookSet::new())
        }
    };
    let after = evaluate_accuracy(&model.spec, &defended, &hooks, &model.test)?;
    // The attacker reads the stored weights; hooks only exist at inference.
    let extraction = built.extract(&defended)?;
    let truth = built.truth_stats(&defended, &payload)?;
    record.accuracy_before = before;
    record.accuracy_after = after;
    record.accuracy_quotient = accuracy_quotient(before, after)?;
    record.integrity = Some(payload_integrity(&extraction, Some((&payload, truth))));
    Ok(record)
}

/// One shuffle record per `(fraction, seed)`, fractions outermost.
pub fn sweep_partial_permutation(
    model: &TrainedModel,
    scheme: &SchemeConfig,
    payload_size: usize,
    fractions: &[f64],
    seeds: &[u64],
) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let mut out = Vec::with_capacity(fractions.len() * seeds.len());
    for &fraction in fractions {
        for &seed in seeds {
            out.push(run_cell(model, scheme, payload_size, &DefenseConfig::Shuffle { fraction }, seed)?);
        }
    }
    Ok(out)
}

/// Mean true BER per fraction and its rank correlation with the fraction.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub fractions: Vec<f64>,
    pub mean_true_ber: Vec<f64>,
    /// Fraction of seeds recovered at each fraction.
    pub recovery_rate: Vec<f64>,
    pub spearman: Option<f64>,
    pub non_decreasing: bool,
}

pub fn summarize_sweep(records: &[ExperimentRecord]) -> SweepSummary {
    let mut fractions: Vec<f64> = Vec::new();
    for r in records {
        if let DefenseConfig::Shuffle { fraction } = r.defense {
            if !fractions.contains(&fraction) {
                fractions.push(fraction);
            }
        }
    }
    let mut mean_true_ber = Vec::new();
    let mut recovery_rate = Vec::new();
    for &f in &fractions {
        let cell: Vec<&IntegrityReport> = records
            .iter()
            .filter(|r| r.defense == DefenseConfig::Shuffle { fraction: f })
            .filter_map(|r| r.integrity.as_ref())
            .collect();
        let n = cell.len().max(1) as f64;
        mean_true_ber.push(cell.iter().map(|i| i.true_ber.unwrap_or(0.0)).sum::<f64>() / n);
        recovery_rate.push(cell.iter().filter(|i| i.recovered).count() as f64 / n);
    }
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| fractions[a].total_cmp(&fractions[b]));
    let non_decreasing = order
        .windows(2)
        .all(|w| mean_true_ber[w[0]] <= mean_true_ber[w[1]]);
    SweepSummary {
        spearman: spearman(&fractions, &mean_true_ber),
        fractions,
        mean_true_ber,
        recovery_rate,
        non_decreasing,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Samples per timed forward pass.
pub const TIMING_BATCH: usize = 8;

/// Medians over `trials` runs, after one discarded warm-up, of checkpoint
/// decoding, permutation with hook construction, a forward pass of the
/// original model and one of the permuted model with its hooks. The two
/// passes swap order every trial; the hook delta averages the median
/// difference of each order so that running first or second cancels out.
pub fn timing_profile(
    spec: &ModelSpec,
    state: &StateDict,
    fraction: f64,
    trials: usize,
    seed: u64,
) -> Result<Timings, HarnessError> {
    if trials < 30 {
        return Err(HarnessError::TooFewTrials(trials));
    }
    let bytes = write_checkpoint(state).map_err(FormatError::from)?;
    let inputs = random_inputs(spec, TIMING_BATCH, seed);
    let empty = HookSet::new();
    let (_, hooks, _) = permute_model(spec, state, fraction, seed)?;
    let (mut load, mut permute, mut plain, mut hooked) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut delta = [Vec::new(), Vec::new()];
    for t in 0..=trials {
        let start = Instant::now();
        let loaded = read_checkpoint(&bytes).expect("encoded by write_checkpoint");
        let load_s = start.elapsed().as_secs_f64();

        let start = Instant::now();
        let (permuted, _, _) = permute_model(spec, &loaded, fraction, seed)?;
        let permute_s = start.elapsed().as_secs_f64();

        let run = |s: &StateDict, h: &HookSet| -> Result<f64, HarnessError> {
            let start = Instant::now();
            let out = forward_batch(spec, s, h, &inputs, TIMING_BATCH)?;
            std::hint::black_box(out);
            Ok(start.elapsed().as_secs_f64())
        };
        let (p, h) = if t % 2 == 0 {
            let p = run(&loaded, &empty)?;
            (p, run(&permuted, &hooks)?)
        } else {
            let h = run(&permuted, &hooks)?;
            (run(&loaded, &empty)?, h)
        };
        if t > 0 {
            load.push(load_s * 1e3);
            permute.push(permute_s * 1e3);
            plain.push(p * 1e6);
            hooked.push(h * 1e6);
            delta[t % 2].push((h - p) * 1e6);
        }
    }
    Ok(Timings {
        trials,
        load_ms: median(load),
        permute_ms: median(permute),
        forward_us: median(plain),
        hooked_forward_us: median(hooked),
        hook_delta_us: delta.map(median).iter().sum::<f64>() / 2.0,
    })
}

/// Everything one configuration produces.
#[derive(Clone, Debug)]
pub struct MatrixOutput {
    pub records: Vec<ExperimentRecord>,
    pub sweep: Vec<ExperimentRecord>,
    pub timings: Vec<(String, Timings)>,
    pub model_accuracy: Vec<(String, f64)>,
}

/// Trains every configured model once, then runs each
/// model × payload size × defense × seed cell, the sweep and the timings.
pub fn run_experiment_matrix(config: &ExperimentConfig) -> Result<MatrixOutput, HarnessError> {
    config.validate()?;
    let mut kinds = config.model_kinds()?;
    if let Some(s) = &config.sweep {
        let k = crate::config::parse_model(&s.model)?;
        if !kinds.contains(&k) {
            kinds.push(k);
        }
    }
    let mut models = Vec::new();
    for &k in &kinds {
        models.push(train_model(k, config.train_seed, config.data_seed)?);
    }
    let find = |k: ModelKind| models.iter().find(|m| m.kind == k).expect("trained above");

    let mut records = Vec::new();
    for k in config.model_kinds()? {
        let m = find(k);
        for &size in &config.payload_sizes {
            for d in &config.defenses {
                for &seed in &config.seeds {
                    records.push(run_cell(m, &config.scheme, size, d, seed)?);
                }
            }
        }
    }
    let sweep = match &config.sweep {
        Some(s) => sweep_partial_permutation(
            find(crate::config::parse_model(&s.model)?),
            &config.scheme,
            s.payload_size,
            &s.fractions,
            &s.seeds,
        )?,
        None => Vec::new(),
    };
    let mut timings = Vec::new();
    if let Some(t) = &config.timing {
        for k in config.model_kinds()? {
            let m = find(k);
            let mut tm = timing_profile(&m.spec, &m.state, t.fraction, t.trials, config.train_seed)?;
            tm.trials = t.trials;
            timings.push((k.name().to_string(), tm));
        }
    }
    Ok(MatrixOutput {
        records,
        sweep,
        timings,
        model_accuracy: models.iter().map(|m| (m.kind.name().to_string(), m.accuracy)).collect(),
    })
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String, HarnessError> {
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Column order of `results.csv`.
pub const RESULTS_COLUMNS: [&str; 21] = [
    "model",
    "payload_bytes",
    "scheme",
    "defense",
    "defense_param",
    "seed",
    "status",
    "accuracy_clean",
    "accuracy_before",
    "accuracy_after",
    "accuracy_quotient",
    "recovered",
    "detected",
    "raw_ber",
    "channel_ber",
    "true_ber",
    "recovered_bytes",
    "chunks",
    "chunks_crc_ok",
    "chunks_ldpc_converged",
    "weighted_fraction",
];

/// Long-format results, one row per record. Timings are left out so reruns
/// are byte-identical.
pub fn results_csv(records: &[ExperimentRecord]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULTS_COLUMNS)?;
    for r in records {
        let i = r.integrity.as_ref();
        let ok = r.status == CellStatus::Ok;
        let num = |x: f64| if ok { x.to_string() } else { String::new() };
        let count = |f: &dyn Fn(&IntegrityReport) -> usize| i.map(|i| f(i).to_string()).unwrap_or_default();
        w.write_record([
            r.model.clone(),
            r.payload_size.to_string(),
            r.scheme.clone(),
            r.defense.kind().to_string(),
            r.defense.param(),
            r.seed.to_string(),
            if ok { "ok" } else { "capacity" }.to_string(),
            r.accuracy_clean.to_string(),
            num(r.accuracy_before),
            num(r.accuracy_after),
            num(r.accuracy_quotient),
            i.map(|i| i.recovered.to_string()).unwrap_or_default(),
            i.map(|i| i.detected.to_string()).unwrap_or_default(),
            opt(i.and_then(|i| i.raw_ber)),
            opt(i.and_then(|i| i.channel_ber)),
            opt(i.and_then(|i| i.true_ber)),
            count(&|i| i.recovered_bytes),
            count(&|i| i.per_chunk.len()),
            count(&|i| i.per_chunk.iter().filter(|c| c.crc_ok).count()),
            count(&|i| i.per_chunk.iter().filter(|c| c.ldpc_converged == Some(true)).count()),
            opt(r.shuffle.map(|s| s.weighted_element_fraction)),
        ])?;
    }
    finish_csv(w)
}

/// `fraction,seed,true_ber,recovered,weighted_fraction` per sweep record.
pub fn fig3_csv(records: &[ExperimentRecord]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["fraction", "seed", "true_ber", "recovered", "weighted_fraction"])?;
    for r in records {
        let DefenseConfig::Shuffle { fraction } = r.defense else {
            continue;
        };
        let i = r.integrity.as_ref();
        w.write_record([
            fraction.to_string(),
            r.seed.to_string(),
            opt(i.and_then(|i| i.true_ber)),
            i.map(|i| i.recovered.to_string()).unwrap_or_default(),
            opt(r.shuffle.map(|s| s.weighted_element_fraction)),
        ])?;
    }
    finish_csv(w)
}

/// Defense rows by model columns, one table per payload size. A cell holds
/// the mean accuracy quotient over seeds and ✓ when the payload was
/// corrupted (not recovered) for every seed; a partial count is shown
/// otherwise.
pub fn table1_md(config: &ExperimentConfig, records: &[ExperimentRecord]) -> String {
    let mut s = String::from("# Model performance under defenses\n\n");
    let _ = writeln!(
        s,
        "Accuracy quotient (defended / infected accuracy), mean over {} seed(s). ✓ marks a corrupted payload.\n",
        config.seeds.len()
    );
    for &size in &config.payload_sizes {
        let _ = writeln!(s, "## Payload {size} B, {}\n", config.scheme.describe());
        s.push_str("| Defense |");
        for m in &config.models {
            let _ = write!(s, " {m} |");
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(config.models.len()));
        s.push('\n');
        for d in &config.defenses {
            let _ = write!(s, "| {} |", d.label());
            for m in &config.models {
                let cell: Vec<&ExperimentRecord> = records
                    .iter()
                    .filter(|r| &r.model == m && r.payload_size == size && r.defense == *d)
                    .collect();
                let _ = write!(s, " {} |", table_cell(&cell));
            }
            s.push('\n');
        }
        s.push('\n');
    }
    s
}

fn table_cell(cell: &[&ExperimentRecord]) -> String {
    if cell.is_empty() {
        return "-".into();
    }
    if cell.iter().any(|r| r.status == CellStatus::Capacity) {
        return "n/a (capacity)".into();
    }
    let q = cell.iter().map(|r| r.accuracy_quotient).sum::<f64>() / cell.len() as f64;
    let corrupted = cell.iter().filter(|r| r.recovered() == Some(false)).count();
    if corrupted == cell.len() {
        format!("{q:.2} ✓")
    } else if corrupted == 0 {
        format!("{q:.2}")
    } else {
        format!("{q:.2} ({corrupted}/{} ✓)", cell.len())
    }
}

/// Load and execution overhead per model.
pub fn table2_md(timings: &[(String, Timings)]) -> String {
    let mut s = String::from("# Permutation defense cost\n\n");
    if let Some((_, t)) = timings.first() {
        let _ = writeln!(
            s,
            "Medians of {} trials after one warm-up, measured on this machine; forward passes use {} samples. \
             Overhead is the paired per-trial difference between hooked and plain passes.\n",
            t.trials, TIMING_BATCH
        );
    }
    s.push_str("| Model | Load (ms) | Permute + hooks (ms) | Forward (µs) | Hooked forward (µs) | Overhead (%) |\n");
    s.push_str("|---|---|---|---|---|---|\n");
    for (m, t) in timings {
        let _ = writeln!(
            s,
            "| {m} | {:.3} | {:.3} | {:.1} | {:.1} | {:.1} |",
            t.load_ms,
            t.permute_ms,
            t.forward_us,
            t.hooked_forward_us,
            t.overhead_pct()
        );
    }
    s
}

/// Writes `results.csv`, `table1.md` and, when present, `fig3.csv` and
/// `table2.md` into `dir`.
pub fn write_outputs(dir: &Path, config: &ExperimentConfig, out: &MatrixOutput) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|source| FormatError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: &str| -> Result<(), HarnessError> {
        let p = dir.join(name);
        write_bytes(&p, text.as_bytes())?;
        written.push(p);
        Ok(())
    };
    put("results.csv", &results_csv(&out.records)?)?;
    put("table1.md", &table1_md(config, &out.records))?;
    if !out.sweep.is_empty() {
        put("fig3.csv", &fig3_csv(&out.sweep)?)?;
    }
    if !out.timings.is_empty() {
        put("table2.md", &table2_md(&out.timings))?;
    }
    Ok(written)
}
