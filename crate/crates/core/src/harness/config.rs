//! Experiment configuration, overrides and the config hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::het_head::{HeadMode, HetHeadConfig};
use crate::noisy_labels::{preset_spec, CorruptionSpec, Redraw};
use crate::rand_dists::NoiseFamily;
use crate::train::{MlpSpec, OptimizerConfig, TrainConfig};

pub const DEFAULT_TAU_GRID: [f64; 18] = [
    0.025, 0.05, 0.1, 0.2, 0.6, 1.0, 1.4, 1.8, 2.2, 2.6, 3.0, 5.0, 10.0, 15.0, 20.0, 35.0, 50.0,
    100.0,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic {
        num_classes: usize,
        dims: usize,
        n_per_class: usize,
        separation: f64,
    },
    Csv {
        path: PathBuf,
        label_column: String,
        #[serde(default)]
        clean_label_column: Option<String>,
        #[serde(default = "default_true")]
        scale: bool,
    },
}

fn default_true() -> bool {
    true
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            num_classes: 10,
            dims: 20,
            n_per_class: 100,
            separation: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    /// `default`, `reduced`, `increased`, `uniform20`, `none` or `custom`.
    #[serde(default = "default_preset")]
    pub preset: String,
    /// Per-class rates, used when `preset` is `custom`.
    #[serde(default)]
    pub rates: Option<Vec<f64>>,
    #[serde(default)]
    pub redraw: Redraw,
}

fn default_preset() -> String {
    "default".into()
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            preset: default_preset(),
            rates: None,
            redraw: Redraw::default(),
        }
    }
}

impl CorruptionConfig {
    pub fn spec(&self, num_classes: usize) -> Result<CorruptionSpec> {
        let mut spec = if self.preset == "custom" {
            let rates = self
                .rates
                .clone()
                .ok_or_else(|| Error::config("corruption.rates", "custom preset needs rates"))?;
            CorruptionSpec::new(rates).map_err(|e| Error::config("corruption.rates", e.to_string()))?
        } else {
            preset_spec(&self.preset, num_classes)
                .map_err(|e| Error::config("corruption.preset", e.to_string()))?
        };
        spec.redraw = self.redraw;
        if spec.num_classes() != num_classes {
            return Err(Error::config(
                "corruption.rates",
                format!("{} rates for {num_classes} classes", spec.num_classes()),
            ));
        }
        Ok(spec)
    }
}

/// Head settings without the class count, which comes from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSettings {
    #[serde(default)]
    pub mode: HeadMode,
    #[serde(default)]
    pub family: NoiseFamily,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_train_samples")]
    pub train_samples: usize,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
}

fn default_temperature() -> f64 {
    1.0
}
fn default_train_samples() -> usize {
    10
}
fn default_eval_samples() -> usize {
    1000
}

impl Default for HeadSettings {
    fn default() -> Self {
        Self {
            mode: HeadMode::default(),
            family: NoiseFamily::default(),
            temperature: default_temperature(),
            train_samples: default_train_samples(),
            eval_samples: default_eval_samples(),
        }
    }
}

impl HeadSettings {
    pub fn to_config(&self, num_classes: usize, tau: f64) -> HetHeadConfig {
        HetHeadConfig {
            num_classes,
            temperature: tau,
            train_samples: self.train_samples,
            eval_samples: self.eval_samples,
            family: self.family,
            mode: self.mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    /// Held-out rows used for the bias estimate.
    #[serde(default = "default_bias_rows")]
    pub bias_rows: usize,
    #[serde(default = "default_bias_samples")]
    pub bias_samples: usize,
    #[serde(default = "default_bias_taus")]
    pub bias_taus: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_bias_rows() -> usize {
    100
}
fn default_bias_samples() -> usize {
    1000
}
fn default_bias_taus() -> Vec<f64> {
    vec![0.1, 1.0, 10.0]
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            bias_rows: default_bias_rows(),
            bias_samples: default_bias_samples(),
            bias_taus: default_bias_taus(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: DatasetSource,
    #[serde(default)]
    pub corruption: CorruptionConfig,
    /// Pins data generation and corruption; otherwise both follow the run seed.
    #[serde(default)]
    pub data_seed: Option<u64>,
    #[serde(default)]
    pub model: MlpSpec,
    #[serde(default)]
    pub head: HeadSettings,
    #[serde(default = "default_tau_grid")]
    pub tau_grid: Vec<f64>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_tau_grid() -> Vec<f64> {
    DEFAULT_TAU_GRID.to_vec()
}
fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            corruption: CorruptionConfig::default(),
            data_seed: None,
            model: MlpSpec::default(),
            head: HeadSettings::default(),
            tau_grid: default_tau_grid(),
            optimizer: OptimizerConfig::default(),
            train: TrainConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            seeds: default_seeds(),
            out_dir: default_out_dir(),
        }
    }
}

fn positive_tau(path: String, tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, format!("temperature must be positive, got {tau}")))
    }
}

impl ExperimentConfig {
    /// Parses JSON text, applies `key=value` overrides, and validates.
    pub fn from_json_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let file: Value =
            serde_json::from_str(text).map_err(|e| Error::config("<root>", e.to_string()))?;
        if !file.is_object() {
            return Err(Error::config("<root>", "config must be a JSON object"));
        }
        let mut value = serde_json::to_value(Self::default())?;
        merge(&mut value, file);
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self =
            serde_json::from_value(value).map_err(|e| Error::config("<root>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => "{}".to_string(),
        };
        Self::from_json_with_overrides(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetSource::Synthetic {
                num_classes,
                dims,
                n_per_class,
                separation,
            } => {
                if *num_classes < 2 {
                    return Err(Error::config("dataset.num_classes", "need at least 2 classes"));
                }
                if *dims == 0 || *n_per_class == 0 {
                    return Err(Error::config("dataset", "dims and n_per_class must be positive"));
                }
                if !separation.is_finite() || *separation < 0.0 {
                    return Err(Error::config("dataset.separation", "must be finite and >= 0"));
                }
                self.corruption.spec(*num_classes)?;
            }
            DatasetSource::Csv { label_column, .. } => {
                if label_column.is_empty() {
                    return Err(Error::config("dataset.label_column", "must not be empty"));
                }
            }
        }
        if self.tau_grid.is_empty() {
            return Err(Error::config("tau_grid", "must not be empty"));
        }
        for (i, &t) in self.tau_grid.iter().enumerate() {
            positive_tau(format!("tau_grid[{i}]"), t)?;
        }
        positive_tau("head.temperature".into(), self.head.temperature)?;
        if self.head.train_samples == 0 || self.head.eval_samples == 0 {
            return Err(Error::config("head", "sample counts must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "seed list must not be empty"));
        }
        self.model
            .validate()
            .map_err(|e| Error::config("model", e.to_string()))?;
        self.optimizer
            .validate()
            .map_err(|e| Error::config("optimizer", e.to_string()))?;
        let mut train = self.train.clone();
        train.baseline = train.baseline.with_default_noise_rate(0.1);
        train
            .validate()
            .map_err(|e| Error::config("train", e.to_string()))?;
        for (i, &t) in self.diagnostics.bias_taus.iter().enumerate() {
            positive_tau(format!("diagnostics.bias_taus[{i}]"), t)?;
        }
        if self.diagnostics.bias_samples == 0 {
            return Err(Error::config("diagnostics.bias_samples", "must be at least 1"));
        }
        Ok(())
    }

    /// Short hex digest of the semantically meaningful fields.
    ///
    /// Keys are sorted, so field order in the source file does not matter.
    /// Temperatures, seeds and the output directory are excluded: they index
    /// the directories below the hash instead.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut value {
            map.remove("tau_grid");
            map.remove("seeds");
            map.remove("out_dir");
            if let Some(Value::Object(head)) = map.get_mut("head") {
                head.remove("temperature");
            }
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.dataset {
            DatasetSource::Synthetic { num_classes, .. } => Some(*num_classes),
            DatasetSource::Csv { .. } => None,
        }
    }
}

/// Parses the right-hand side of an override as JSON, falling back to a string.
fn parse_override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `a.b.c=value` inside a JSON object, creating intermediate objects.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty path segment"));
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        if !node.is_object() {
            if node.is_null() {
                *node = Value::Object(Default::default());
            } else {
                return Err(Error::config(parts[..i].join("."), "is not an object"));
            }
        }
        let map = node.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            let new = parse_override_value(raw);
            // Switching a tagged variant drops the old variant's fields.
            if *part == "kind" && map.get("kind").is_some_and(|old| *old != new) {
                map.clear();
            }
            map.insert(part.to_string(), new);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("loop returns on the last segment")
}

/// Deep-merges `overlay` into `base`. An object whose `kind` tag differs from
/// the base replaces it outright.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            if o.get("kind").is_some_and(|k| b.get("kind") != Some(k)) {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Formats a temperature for use as a directory name.
pub fn tau_dir(tau: f64) -> String {
    format!("tau-{tau}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
        let parsed = ExperimentConfig::from_json_with_overrides("{}", &[]).unwrap();
        assert_eq!(parsed.hash(), ExperimentConfig::default().hash());
    }

    #[test]
    fn overrides_set_nested_fields() {
        let cfg = ExperimentConfig::from_json_with_overrides(
            "{}",
            &[
                "head.mode=homoscedastic".into(),
                "train.max_epochs=3".into(),
                "seeds=[4,5]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.head.mode, HeadMode::Homoscedastic);
        assert_eq!(cfg.train.max_epochs, 3);
        assert_eq!(cfg.seeds, vec![4, 5]);
    }

    #[test]
    fn zero_tau_rejected_with_path() {
        let err = ExperimentConfig::from_json_with_overrides("{}", &["tau_grid=[1.0, 0.0]".into()])
            .unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "tau_grid[1]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(ExperimentConfig::from_json_with_overrides(r#"{"bogus": 1}"#, &[]).is_err());
        assert!(ExperimentConfig::from_json_with_overrides("{}", &["no_equals".into()]).is_err());
    }

    #[test]
    fn hash_ignores_order_and_indexing_fields() {
        let a = ExperimentConfig::from_json_with_overrides(
            r#"{"seeds": [1], "head": {"mode": "heteroscedastic", "train_samples": 10}}"#,
            &[],
        )
        .unwrap();
        let b = ExperimentConfig::from_json_with_overrides(
            r#"{"head": {"train_samples": 10, "temperature": 3.0, "mode": "heteroscedastic"}, "seeds": [2, 3]}"#,
            &[],
        )
        .unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::from_json_with_overrides("{}", &["head.train_samples=11".into()]).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn nested_override_keeps_variant_defaults() {
        let cfg = ExperimentConfig::from_json_with_overrides(
            "{}",
            &["dataset.n_per_class=30".to_string()],
        )
        .unwrap();
        match cfg.dataset {
            DatasetSource::Synthetic { n_per_class, num_classes, .. } => {
                assert_eq!(n_per_class, 30);
                assert_eq!(num_classes, 10);
            }
            other => panic!("unexpected dataset {other:?}"),
        }
    }

    #[test]
    fn switching_variant_drops_old_fields() {
        let cfg = ExperimentConfig::from_json_with_overrides(
            r#"{"train": {"baseline": {"kind": "bootstrap"}}}"#,
            &[],
        )
        .unwrap();
        assert_eq!(cfg.train.baseline.name(), "bootstrap");
        let cfg = ExperimentConfig::from_json_with_overrides(
            "{}",
            &["optimizer.kind=sgd".to_string(), "optimizer.lr=0.1".to_string()],
        )
        .unwrap();
        assert!(matches!(cfg.optimizer, crate::train::OptimizerConfig::Sgd { .. }));
    }
}
