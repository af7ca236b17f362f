//! Temperature sweeps over matched seeds, with paired comparisons.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{execute_run, write_run, RunResult};
use crate::error::{Error, Result};
use crate::het_head::HeadMode;
use crate::metrics::{paired_t_test, TTest};

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_SUMMARY: &str = "sweep_summary.json";

/// Which model a sweep cell trains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    /// The configured model at one grid temperature.
    Grid,
    /// Homoscedastic comparison model.
    Homoscedastic,
    /// Configured model at `tau = 1`, added when the grid lacks it.
    UnitTau,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub kind: CellKind,
    pub tau: f64,
    pub seed: u64,
    pub result: Option<RunResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSummary {
    pub tau: f64,
    pub runs: usize,
    pub mean_valid_nll: f64,
    pub mean_test_nll: f64,
    pub mean_test_clean_accuracy: f64,
    pub median_log_dispersion: Option<f64>,
    pub median_bias: Option<f64>,
}

/// Validation row handed to τ* selection; it carries no test metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationRow {
    pub tau: f64,
    pub seed: u64,
    pub valid_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub against: String,
    pub seeds: Vec<u64>,
    pub mean_test_nll: f64,
    pub baseline_mean_test_nll: f64,
    pub t_test: Option<TTest>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config_hash: String,
    pub per_tau: Vec<TauSummary>,
    pub tau_star: Option<f64>,
    pub test_nll_at_tau_star: Option<f64>,
    pub comparisons: Vec<Comparison>,
    pub cells: Vec<CellOutcome>,
    pub failures: usize,
}

/// Picks the temperature with the lowest mean validation NLL; ties go to the smaller τ.
pub fn select_tau(rows: &[ValidationRow]) -> Option<f64> {
    let mut by_tau: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = by_tau.entry(r.tau.to_bits()).or_insert((r.tau, 0.0, 0));
        e.1 += r.valid_nll;
        e.2 += 1;
    }
    by_tau
        .values()
        .map(|&(tau, sum, n)| (tau, sum / n as f64))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)))
        .map(|(tau, _)| tau)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn summarize(tau: f64, results: &[&RunResult]) -> TauSummary {
    TauSummary {
        tau,
        runs: results.len(),
        mean_valid_nll: mean(results.iter().map(|r| r.valid.noisy_nll)),
        mean_test_nll: mean(results.iter().map(|r| r.test.noisy_nll)),
        mean_test_clean_accuracy: mean(results.iter().map(|r| r.test.clean_accuracy)),
        median_log_dispersion: median(results.iter().filter_map(|r| r.median_log_dispersion).collect()),
        median_bias: median(results.iter().map(|r| r.bias.value).collect()),
    }
}

fn compare(name: &str, ours: &BTreeMap<u64, f64>, theirs: &BTreeMap<u64, f64>) -> Comparison {
    let seeds: Vec<u64> = ours.keys().filter(|s| theirs.contains_key(s)).copied().collect();
    let a: Vec<f64> = seeds.iter().map(|s| ours[s]).collect();
    let b: Vec<f64> = seeds.iter().map(|s| theirs[s]).collect();
    let (t_test, note) = match paired_t_test(&a, &b) {
        Ok(t) => (Some(t), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Comparison {
        against: name.to_string(),
        seeds,
        mean_test_nll: mean(a.iter().copied()),
        baseline_mean_test_nll: mean(b.iter().copied()),
        t_test,
        note,
    }
}

fn run_cell(cfg: &ExperimentConfig, kind: CellKind, tau: f64, seed: u64) -> CellOutcome {
    let outcome = execute_run(cfg, seed, tau).and_then(|a| {
        write_run(&cfg.out_dir, &a)?;
        Ok(a.result)
    });
    let (result, error) = match outcome {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    CellOutcome {
        kind,
        tau,
        seed,
        result,
        error,
    }
}

/// Runs every `(tau, seed)` cell of the grid plus the comparison models, on a
/// pool of `workers` threads, and writes `sweep.csv` and `sweep_summary.json`
/// under `<out>/<hash>/`.
pub fn sweep_temperature(cfg: &ExperimentConfig, workers: usize) -> Result<SweepReport> {
    cfg.validate()?;
    let homo_cfg = (cfg.head.mode == HeadMode::Heteroscedastic).then(|| {
        let mut c = cfg.clone();
        c.head.mode = HeadMode::Homoscedastic;
        c
    });
    let mut jobs: Vec<(&ExperimentConfig, CellKind, f64, u64)> = Vec::new();
    for &tau in &cfg.tau_grid {
        for &seed in &cfg.seeds {
            jobs.push((cfg, CellKind::Grid, tau, seed));
        }
    }
    if let Some(h) = &homo_cfg {
        for &seed in &cfg.seeds {
            jobs.push((h, CellKind::Homoscedastic, 1.0, seed));
        }
        if !cfg.tau_grid.contains(&1.0) {
            for &seed in &cfg.seeds {
                jobs.push((cfg, CellKind::UnitTau, 1.0, seed));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let cells: Vec<CellOutcome> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|&(c, kind, tau, seed)| run_cell(c, kind, tau, seed))
            .collect()
    });

    let ok = |kind: CellKind| {
        cells
            .iter()
            .filter(move |c| c.kind == kind)
            .filter_map(|c| c.result.as_ref())
    };
    let per_tau: Vec<TauSummary> = cfg
        .tau_grid
        .iter()
        .map(|&tau| {
            let rs: Vec<&RunResult> = ok(CellKind::Grid).filter(|r| r.tau == tau).collect();
            summarize(tau, &rs)
        })
        .collect();

    let validation: Vec<ValidationRow> = ok(CellKind::Grid)
        .map(|r| ValidationRow {
            tau: r.tau,
            seed: r.seed,
            valid_nll: r.valid.noisy_nll,
        })
        .collect();
    let tau_star = select_tau(&validation);

    let test_by_seed = |kind: CellKind, tau: f64| -> BTreeMap<u64, f64> {
        ok(kind)
            .filter(|r| r.tau == tau)
            .map(|r| (r.seed, r.test.noisy_nll))
            .collect()
    };
    let mut comparisons = Vec::new();
    let mut test_nll_at_tau_star = None;
    if let Some(ts) = tau_star {
        let ours = test_by_seed(CellKind::Grid, ts);
        test_nll_at_tau_star = Some(mean(ours.values().copied()));
        if homo_cfg.is_some() {
            let homo = test_by_seed(CellKind::Homoscedastic, 1.0);
            comparisons.push(compare("homoscedastic", &ours, &homo));
            let unit_kind = if cfg.tau_grid.contains(&1.0) {
                CellKind::Grid
            } else {
                CellKind::UnitTau
            };
            comparisons.push(compare("tau=1", &ours, &test_by_seed(unit_kind, 1.0)));
        }
    }

    let failures = cells.iter().filter(|c| c.result.is_none()).count();
    let report = SweepReport {
        config_hash: cfg.hash(),
        per_tau,
        tau_star,
        test_nll_at_tau_star,
        comparisons,
        cells,
        failures,
    };
    write_sweep(cfg, &report)?;
    Ok(report)
}

fn write_sweep(cfg: &ExperimentConfig, report: &SweepReport) -> Result<PathBuf> {
    let dir = cfg.out_dir.join(&report.config_hash);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(SWEEP_CSV);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "kind", "tau", "seed", "valid_nll", "test_nll", "test_accuracy", "test_clean_accuracy",
        "test_ece", "median_log_dispersion", "bias", "error",
    ])?;
    for c in &report.cells {
        let kind = serde_json::to_value(c.kind)?.as_str().unwrap_or("").to_string();
        let mut row = vec![kind, c.tau.to_string(), c.seed.to_string()];
        match &c.result {
            Some(r) => row.extend([
                r.valid.noisy_nll.to_string(),
                r.test.noisy_nll.to_string(),
                r.test.noisy_accuracy.to_string(),
                r.test.clean_accuracy.to_string(),
                r.test.ece.to_string(),
                r.median_log_dispersion.map(|v| v.to_string()).unwrap_or_default(),
                r.bias.value.to_string(),
                String::new(),
            ]),
            None => {
                row.extend(std::iter::repeat_n(String::new(), 7));
                row.push(c.error.clone().unwrap_or_default());
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let path = dir.join(SWEEP_SUMMARY);
    let summary = serde_json::json!({
        "config_hash": report.config_hash,
        "per_tau": report.per_tau,
        "tau_star": report.tau_star,
        "test_nll_at_tau_star": report.test_nll_at_tau_star,
        "comparisons": report.comparisons,
        "failures": report.failures,
    });
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_by_mean_validation_nll() {
        let rows = [
            ValidationRow { tau: 1.0, seed: 0, valid_nll: 1.0 },
            ValidationRow { tau: 1.0, seed: 1, valid_nll: 3.0 },
            ValidationRow { tau: 3.0, seed: 0, valid_nll: 1.5 },
            ValidationRow { tau: 3.0, seed: 1, valid_nll: 1.6 },
        ];
        assert_eq!(select_tau(&rows), Some(3.0));
        assert_eq!(select_tau(&rows[..1]), Some(1.0));
        assert_eq!(select_tau(&[]), None);
    }

    #[test]
    fn ties_prefer_smaller_tau() {
        let rows = [
            ValidationRow { tau: 2.0, seed: 0, valid_nll: 1.0 },
            ValidationRow { tau: 0.5, seed: 0, valid_nll: 1.0 },
        ];
        assert_eq!(select_tau(&rows), Some(0.5));
    }
}
