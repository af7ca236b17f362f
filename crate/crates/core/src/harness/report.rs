//! Consolidated tables from a results directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::{RunResult, RESULT_FILE};
use crate::error::{Error, Result};
use crate::het_head::HeadMode;
use crate::metrics::{paired_t_test, significance_marker};

pub const REPORT_CSV: &str = "report.csv";
pub const SUMMARY_CSV: &str = "summary.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub mean_test_nll: f64,
    pub std_test_nll: f64,
    pub mean_test_clean_accuracy: f64,
    pub std_test_clean_accuracy: f64,
    /// Paired p-value of test NLL against the reference method.
    pub p_value: Option<f64>,
    pub marker: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: usize,
    pub reference: Option<String>,
    pub methods: Vec<MethodSummary>,
    /// Result files that could not be parsed, with the reason.
    pub malformed: Vec<(PathBuf, String)>,
}

fn collect_result_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_result_files(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == RESULT_FILE) {
            out.push(path);
        }
    }
    Ok(())
}

/// Method label used for grouping: mode, baseline and temperature.
pub fn method_label(r: &RunResult) -> String {
    let mode = match r.mode {
        HeadMode::Heteroscedastic => "het",
        HeadMode::Homoscedastic => "hom",
    };
    format!("{mode}/{}/tau={}/{}", r.baseline, r.tau, r.config_hash)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Reads every `result.json` below `dir`, writes `report.csv` (one row per run)
/// and `summary.csv` (one row per method) into `dir`.
///
/// The reference method for the t-test markers is the homoscedastic run group
/// when there is exactly one, otherwise the first group in label order.
pub fn report(dir: &Path) -> Result<Report> {
    let mut files = Vec::new();
    collect_result_files(dir, &mut files)?;
    let mut results = Vec::new();
    let mut malformed = Vec::new();
    for f in files {
        match std::fs::read_to_string(&f)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str::<RunResult>(&t).map_err(|e| e.to_string()))
        {
            Ok(r) => results.push(r),
            Err(e) => malformed.push((f, e)),
        }
    }
    if results.is_empty() {
        return Err(Error::invalid(format!("no readable {RESULT_FILE} under {}", dir.display())));
    }

    let path = dir.join(REPORT_CSV);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "method", "config_hash", "mode", "baseline", "tau", "seed", "valid_nll", "test_nll",
        "test_accuracy", "test_clean_accuracy", "test_ece", "platt_temperature", "test_platt_nll",
    ])?;
    let mut groups: BTreeMap<String, BTreeMap<u64, &RunResult>> = BTreeMap::new();
    for r in &results {
        let label = method_label(r);
        w.write_record([
            label.clone(),
            r.config_hash.clone(),
            format!("{:?}", r.mode).to_lowercase(),
            r.baseline.clone(),
            r.tau.to_string(),
            r.seed.to_string(),
            r.valid.noisy_nll.to_string(),
            r.test.noisy_nll.to_string(),
            r.test.noisy_accuracy.to_string(),
            r.test.clean_accuracy.to_string(),
            r.test.ece.to_string(),
            r.platt_temperature.to_string(),
            r.test_platt.noisy_nll.to_string(),
        ])?;
        groups.entry(label).or_default().insert(r.seed, r);
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let homo: Vec<&String> = groups.keys().filter(|k| k.starts_with("hom/")).collect();
    let reference = if homo.len() == 1 {
        Some(homo[0].clone())
    } else {
        groups.keys().next().cloned()
    };
    let mut methods = Vec::new();
    for (label, runs) in &groups {
        let nll: Vec<f64> = runs.values().map(|r| r.test.noisy_nll).collect();
        let acc: Vec<f64> = runs.values().map(|r| r.test.clean_accuracy).collect();
        let (mean_nll, std_nll) = mean_std(&nll);
        let (mean_acc, std_acc) = mean_std(&acc);
        let p_value = reference
            .as_ref()
            .filter(|r| *r != label)
            .and_then(|r| {
                let base = &groups[r];
                let seeds: Vec<u64> = runs.keys().filter(|s| base.contains_key(s)).copied().collect();
                let a: Vec<f64> = seeds.iter().map(|s| runs[s].test.noisy_nll).collect();
                let b: Vec<f64> = seeds.iter().map(|s| base[s].test.noisy_nll).collect();
                paired_t_test(&a, &b).ok()
            })
            .map(|t| t.p_value);
        methods.push(MethodSummary {
            method: label.clone(),
            runs: runs.len(),
            mean_test_nll: mean_nll,
            std_test_nll: std_nll,
            mean_test_clean_accuracy: mean_acc,
            std_test_clean_accuracy: std_acc,
            p_value,
            marker: p_value.map(significance_marker).unwrap_or("").to_string(),
        });
    }

    let path = dir.join(SUMMARY_CSV);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "method", "runs", "mean_test_nll", "std_test_nll", "mean_test_clean_accuracy",
        "std_test_clean_accuracy", "p_value", "marker",
    ])?;
    for m in &methods {
        w.write_record([
            m.method.clone(),
            m.runs.to_string(),
            m.mean_test_nll.to_string(),
            m.std_test_nll.to_string(),
            m.mean_test_clean_accuracy.to_string(),
            m.std_test_clean_accuracy.to_string(),
            m.p_value.map(|p| p.to_string()).unwrap_or_default(),
            m.marker.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    Ok(Report {
        rows: results.len(),
        reference,
        methods,
        malformed,
    })
}
