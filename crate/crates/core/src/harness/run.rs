//! Single runs: data, training, evaluation and on-disk artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_FILE};
use super::config::{tau_dir, DatasetSource, ExperimentConfig};
use crate::error::{Error, Result};
use crate::het_head::{HeadMode, HetHeadConfig};
use crate::metrics::{
    apply_temperature, estimate_bias, fit_platt_temperature, report_from_probabilities,
    split_probabilities, BiasEstimate, MetricsReport,
};
use crate::noisy_labels::{
    corrupt_labels, load_and_split, synth_clusters, CorruptionSpec, LoadOptions, NoisyDataset,
    Split, SplitData,
};
use crate::rand_dists::SeededRng;
use crate::train::{fit, Classifier, EpochRecord};

pub const RESULT_FILE: &str = "result.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const TIMING_FILE: &str = "timing.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";

const STREAM_DATA: u64 = 1;
const STREAM_CORRUPT: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_EVAL: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config_hash: String,
    pub seed: u64,
    pub tau: f64,
    pub mode: HeadMode,
    pub baseline: String,
    pub noise_rate: f64,
    pub valid: MetricsReport,
    pub test: MetricsReport,
    pub platt_temperature: f64,
    pub test_platt: MetricsReport,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub median_log_dispersion: Option<f64>,
    /// Relaxation bias at `tau`, averaged over held-out rows.
    pub bias: BiasEstimate,
    /// Relative to the run directory.
    pub checkpoint: String,
    /// Kept out of `result.json` so reruns produce identical bytes; see `timing.json`.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Everything a run produces, before anything is written.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub result: RunResult,
    pub history: Vec<EpochRecord>,
    pub model: Classifier,
}

/// Builds and corrupts the dataset for `seed` (or the pinned `data_seed`).
pub fn build_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<(NoisyDataset, CorruptionSpec)> {
    let data_seed = cfg.data_seed.unwrap_or(seed);
    let mut rng = SeededRng::with_stream(data_seed, STREAM_DATA);
    let clean = match &cfg.dataset {
        DatasetSource::Synthetic {
            num_classes,
            dims,
            n_per_class,
            separation,
        } => synth_clusters(*num_classes, *dims, *n_per_class, *separation, &mut rng)?,
        DatasetSource::Csv {
            path,
            label_column,
            clean_label_column,
            scale,
        } => {
            let opts = LoadOptions {
                clean_label_column: clean_label_column.clone(),
                scale: *scale,
                ..LoadOptions::new(label_column.clone())
            };
            load_and_split(path, &opts, &mut rng)?
        }
    };
    let spec = cfg.corruption.spec(clean.num_classes)?;
    let mut rng = SeededRng::with_stream(data_seed, STREAM_CORRUPT);
    let noisy = corrupt_labels(&clean, &spec, &mut rng)?;
    Ok((noisy, spec))
}

/// Evaluation seeds for the valid and test splits of a run.
fn eval_seeds(seed: u64) -> (u64, u64) {
    let mut rng = SeededRng::with_stream(seed, STREAM_EVAL);
    (rng.next_u64(), rng.next_u64())
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Median over epochs of the recorded log index of dispersion.
pub fn median_dispersion(history: &[EpochRecord]) -> Option<f64> {
    let mut v: Vec<f64> = history.iter().filter_map(|r| r.log_dispersion).collect();
    median(&mut v)
}

/// Mean bias estimate over the first `rows` rows of `split`, with one fresh
/// generator seeded by `seed` walking the rows in order.
pub fn bias_over_rows(
    model: &Classifier,
    head: &HetHeadConfig,
    split: &SplitData,
    rows: usize,
    tau: f64,
    samples: usize,
    seed: u64,
) -> Result<BiasEstimate> {
    let n = rows.min(split.len());
    if n == 0 {
        return Err(Error::invalid("bias estimate needs at least one held-out row"));
    }
    let idx: Vec<usize> = (0..n).collect();
    let repr = model.representation(&split.features.select_rows(&idx)?)?;
    let mut rng = SeededRng::new(seed);
    let (mut value, mut var) = (0.0, 0.0);
    for i in 0..n {
        let b = estimate_bias(&model.head, repr.row(i), head, tau, samples, &mut rng)?;
        value += b.value;
        var += b.std_error * b.std_error;
    }
    Ok(BiasEstimate {
        value: value / n as f64,
        samples,
        tau,
        std_error: var.sqrt() / n as f64,
    })
}

/// Trains and evaluates one `(config, seed, tau)` cell without touching disk.
pub fn execute_run(cfg: &ExperimentConfig, seed: u64, tau: f64) -> Result<RunArtifacts> {
    cfg.validate()?;
    let start = Instant::now();
    let (data, spec) = build_dataset(cfg, seed)?;
    let noise_rate = spec.effective_noise_rate();
    let head = cfg.head.to_config(data.num_classes, tau);
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = seed;
    train_cfg.baseline = train_cfg.baseline.with_default_noise_rate(noise_rate);
    let mut rng = SeededRng::with_stream(seed, STREAM_TRAIN);
    let trained = fit(&cfg.model, &head, &data, &train_cfg, &cfg.optimizer, &mut rng)?;

    let valid = data.view(Split::Valid)?;
    let test = data.view(Split::Test)?;
    let (valid_seed, test_seed) = eval_seeds(seed);
    let valid_probs = split_probabilities(&trained.model, &head, &valid, valid_seed)?;
    let test_probs = split_probabilities(&trained.model, &head, &test, test_seed)?;
    let valid_report =
        report_from_probabilities(&valid_probs, &valid.observed, &valid.clean, head.eval_samples)?;
    let test_report =
        report_from_probabilities(&test_probs, &test.observed, &test.clean, head.eval_samples)?;
    let platt = fit_platt_temperature(&valid_probs, &valid.observed)?;
    let scaled: Vec<Vec<f64>> = test_probs
        .iter()
        .map(|p| apply_temperature(p, platt))
        .collect::<Result<_>>()?;
    let test_platt =
        report_from_probabilities(&scaled, &test.observed, &test.clean, head.eval_samples)?;
    let diag = &cfg.diagnostics;
    let bias = bias_over_rows(
        &trained.model,
        &head,
        &test,
        diag.bias_rows,
        tau,
        diag.bias_samples,
        diag.seed,
    )?;

    let result = RunResult {
        config_hash: cfg.hash(),
        seed,
        tau,
        mode: head.mode,
        baseline: train_cfg.baseline.name().to_string(),
        noise_rate,
        valid: valid_report,
        test: test_report,
        platt_temperature: platt,
        test_platt,
        best_epoch: trained.best_epoch,
        epochs_run: trained.history.len(),
        median_log_dispersion: median_dispersion(&trained.history),
        bias,
        checkpoint: CHECKPOINT_FILE.to_string(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok(RunArtifacts {
        result,
        history: trained.history,
        model: trained.model,
    })
}

/// `<out>/<hash>/tau-<tau>/<seed>`
pub fn run_dir(out: &Path, hash: &str, tau: f64, seed: u64) -> PathBuf {
    out.join(hash).join(tau_dir(tau)).join(seed.to_string())
}

pub fn write_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for rec in history {
        w.serialize(rec)?;
    }
    if history.is_empty() {
        w.write_record(["epoch", "train_loss", "valid_accuracy", "log_dispersion"])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_result(dir: &Path) -> Result<RunResult> {
    let path = dir.join(RESULT_FILE);
    if !path.exists() {
        return Err(Error::Missing(path));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes result, history, checkpoint and timing files; returns the run directory.
pub fn write_run(out: &Path, artifacts: &RunArtifacts) -> Result<PathBuf> {
    let r = &artifacts.result;
    let dir = run_dir(out, &r.config_hash, r.tau, r.seed);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(RESULT_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(r)?).map_err(|e| Error::io(&path, e))?;
    write_history(&artifacts.history, &dir.join(HISTORY_FILE))?;
    write_checkpoint(&artifacts.model, &dir)?;
    let path = dir.join(TIMING_FILE);
    let timing = serde_json::json!({ "wall_time_secs": r.wall_time_secs });
    std::fs::write(&path, timing.to_string()).map_err(|e| Error::io(&path, e))?;
    Ok(dir)
}

/// Runs one cell and writes its artifacts under `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64, tau: f64) -> Result<RunResult> {
    let artifacts = execute_run(cfg, seed, tau)?;
    write_run(&cfg.out_dir, &artifacts)?;
    Ok(artifacts.result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionPoint {
    pub epoch: usize,
    pub log_dispersion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub bias: Vec<BiasEstimate>,
    pub dispersion: Vec<DispersionPoint>,
}

/// Bias per temperature for a stored run, plus its recorded dispersion series.
/// Writes `diagnostics.csv` into the run directory.
pub fn diagnose(run: &Path, cfg: &ExperimentConfig) -> Result<DiagnosticsReport> {
    let history = read_history(&run.join(HISTORY_FILE))?;
    let result = read_result(run)?;
    let model = read_checkpoint(run)?;
    let (data, _) = build_dataset(cfg, result.seed)?;
    let test = data.view(Split::Test)?;
    let diag = &cfg.diagnostics;
    let bias = diag
        .bias_taus
        .iter()
        .map(|&tau| {
            let head = cfg.head.to_config(data.num_classes, tau);
            bias_over_rows(&model, &head, &test, diag.bias_rows, tau, diag.bias_samples, diag.seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let dispersion: Vec<DispersionPoint> = history
        .iter()
        .map(|r| DispersionPoint {
            epoch: r.epoch,
            log_dispersion: r.log_dispersion,
        })
        .collect();

    let path = run.join(DIAGNOSTICS_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["kind", "key", "value", "std_error"])?;
    for b in &bias {
        w.write_record(["bias", &b.tau.to_string(), &b.value.to_string(), &b.std_error.to_string()])?;
    }
    for p in &dispersion {
        let v = p.log_dispersion.map(|v| v.to_string()).unwrap_or_default();
        w.write_record(["log_dispersion", &p.epoch.to_string(), &v, ""])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(DiagnosticsReport { bias, dispersion })
}
