//! Datasets with observed (possibly corrupted) and clean labels, plus the
//! class-conditional corruption processes used in the experiments.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rand_dists::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// Features with observed and clean labels and a split tag per row.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDataset {
    /// `N x D`
    pub features: Tensor,
    pub observed_labels: Vec<usize>,
    pub clean_labels: Vec<usize>,
    pub splits: Vec<Split>,
    pub num_classes: usize,
}

/// Rows of one split, copied out of a [`NoisyDataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub features: Tensor,
    pub observed: Vec<usize>,
    pub clean: Vec<usize>,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }
}

impl NoisyDataset {
    pub fn new(
        features: Tensor,
        observed_labels: Vec<usize>,
        clean_labels: Vec<usize>,
        splits: Vec<Split>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.rows();
        if features.shape().len() != 2
            || observed_labels.len() != n
            || clean_labels.len() != n
            || splits.len() != n
        {
            return Err(Error::shape(
                "noisy_dataset",
                format!(
                    "features {:?}, {} observed, {} clean, {} split tags",
                    features.shape(),
                    observed_labels.len(),
                    clean_labels.len(),
                    splits.len()
                ),
            ));
        }
        if let Some(bad) = observed_labels
            .iter()
            .chain(&clean_labels)
            .find(|&&y| y >= num_classes)
        {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            observed_labels,
            clean_labels,
            splits,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.observed_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn view(&self, split: Split) -> Result<SplitData> {
        let idx = self.indices(split);
        Ok(SplitData {
            features: self.features.select_rows(&idx)?,
            observed: idx.iter().map(|&i| self.observed_labels[i]).collect(),
            clean: idx.iter().map(|&i| self.clean_labels[i]).collect(),
        })
    }

    /// Reassigns split tags by shuffled index with the given fractions.
    pub fn resplit(&mut self, fractions: [f64; 3], rng: &mut SeededRng) -> Result<()> {
        self.splits = assign_splits(self.len(), fractions, rng)?;
        Ok(())
    }

    /// Fraction of rows whose observed label differs from the clean one.
    pub fn disagreement_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let diff = self
            .observed_labels
            .iter()
            .zip(&self.clean_labels)
            .filter(|(a, b)| a != b)
            .count();
        diff as f64 / self.len() as f64
    }
}

fn check_fractions(fractions: [f64; 3]) -> Result<()> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    Ok(())
}

fn assign_splits(n: usize, fractions: [f64; 3], rng: &mut SeededRng) -> Result<Vec<Split>> {
    check_fractions(fractions)?;
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_valid = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
    }
    Ok(splits)
}

/// How a corrupted label is redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Redraw {
    /// Uniform over all `K` classes, so the original label can come back.
    #[default]
    IncludeOriginal,
    /// Uniform over the other `K - 1` classes.
    ExcludeOriginal,
}

/// Per-class corruption probability and the redraw rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub per_class_rate: Vec<f64>,
    #[serde(default)]
    pub redraw: Redraw,
}

impl CorruptionSpec {
    pub fn new(per_class_rate: Vec<f64>) -> Result<Self> {
        let spec = Self {
            per_class_rate,
            redraw: Redraw::IncludeOriginal,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self
            .per_class_rate
            .iter()
            .find(|r| !(0.0..=1.0).contains(*r))
        {
            return Err(Error::invalid(format!("corruption rate {r} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.per_class_rate.len()
    }

    /// Mean probability, over balanced classes, that a label ends up wrong.
    pub fn effective_noise_rate(&self) -> f64 {
        let k = self.per_class_rate.len();
        if k == 0 {
            return 0.0;
        }
        let keep = match self.redraw {
            Redraw::IncludeOriginal => (k as f64 - 1.0) / k as f64,
            Redraw::ExcludeOriginal => 1.0,
        };
        self.per_class_rate.iter().map(|r| r * keep).sum::<f64>() / k as f64
    }
}

/// Named corruption presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Default,
    Reduced,
    Increased,
    Uniform20,
    None,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "default" => Ok(Preset::Default),
            "reduced" => Ok(Preset::Reduced),
            "increased" => Ok(Preset::Increased),
            "uniform20" => Ok(Preset::Uniform20),
            "none" => Ok(Preset::None),
            other => Err(Error::invalid(format!("unknown corruption preset `{other}`"))),
        }
    }
}

impl Preset {
    pub fn rates(self) -> [f64; 10] {
        match self {
            Preset::Default => [0.0, 0.0, 0.0, 0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            Preset::Reduced => [0.0, 0.0, 0.0, 0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30],
            Preset::Increased => [0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65],
            Preset::Uniform20 => [0.2; 10],
            Preset::None => [0.0; 10],
        }
    }
}

/// Corruption spec for a named preset. `none` works for any `K`; the others need `K = 10`.
pub fn preset_spec(name: &str, num_classes: usize) -> Result<CorruptionSpec> {
    let preset: Preset = name.parse()?;
    if preset == Preset::None {
        return CorruptionSpec::new(vec![0.0; num_classes]);
    }
    if num_classes != 10 {
        return Err(Error::invalid(format!(
            "preset `{name}` is defined for 10 classes, got {num_classes}"
        )));
    }
    CorruptionSpec::new(preset.rates().to_vec())
}

/// Corrupts observed labels of every row; see [`corrupt_splits`].
pub fn corrupt_labels(
    ds: &NoisyDataset,
    spec: &CorruptionSpec,
    rng: &mut SeededRng,
) -> Result<NoisyDataset> {
    corrupt_splits(ds, spec, &Split::ALL, rng)
}

/// Redraws the observed label of each row in `splits` with probability
/// `per_class_rate[clean_label]`. Observed labels are rebuilt from the clean
/// ones, so the result depends only on `(ds.clean_labels, spec, rng seed)`.
/// Every row consumes draws whether or not its split is selected.
pub fn corrupt_splits(
    ds: &NoisyDataset,
    spec: &CorruptionSpec,
    splits: &[Split],
    rng: &mut SeededRng,
) -> Result<NoisyDataset> {
    spec.validate()?;
    let k = ds.num_classes;
    if spec.per_class_rate.len() != k {
        return Err(Error::invalid(format!(
            "corruption spec has {} rates for {k} classes",
            spec.per_class_rate.len()
        )));
    }
    let mut out = ds.clone();
    for (i, &clean) in ds.clean_labels.iter().enumerate() {
        let flip = rng.uniform() < spec.per_class_rate[clean];
        let redrawn = match spec.redraw {
            Redraw::IncludeOriginal => rng.index(k),
            Redraw::ExcludeOriginal if k > 1 => {
                let r = rng.index(k - 1);
                if r >= clean {
                    r + 1
                } else {
                    r
                }
            }
            Redraw::ExcludeOriginal => clean,
        };
        out.observed_labels[i] = if flip && splits.contains(&ds.splits[i]) {
            redrawn
        } else {
            clean
        };
    }
    Ok(out)
}

/// Gaussian clusters with unit variance, one per class.
///
/// Centers lie on a circle of radius `separation` in the first two
/// coordinates (evenly spaced on `[-separation, separation]` when `dims == 1`).
/// Splits are 70/15/15 by shuffled index.
pub fn synth_clusters(
    num_classes: usize,
    dims: usize,
    n_per_class: usize,
    separation: f64,
    rng: &mut SeededRng,
) -> Result<NoisyDataset> {
    if num_classes == 0 || dims == 0 || n_per_class == 0 {
        return Err(Error::invalid(
            "synth_clusters needs at least one class, dimension and example",
        ));
    }
    let centers: Vec<Vec<f64>> = (0..num_classes)
        .map(|c| {
            let mut center = vec![0.0; dims];
            if dims == 1 {
                if num_classes > 1 {
                    center[0] =
                        separation * (2.0 * c as f64 / (num_classes - 1) as f64 - 1.0);
                }
            } else {
                let angle = 2.0 * std::f64::consts::PI * c as f64 / num_classes as f64;
                center[0] = separation * angle.cos();
                center[1] = separation * angle.sin();
            }
            center
        })
        .collect();
    let n = num_classes * n_per_class;
    let mut data = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            data.extend(center.iter().map(|m| m + rng.standard_normal()));
            labels.push(c);
        }
    }
    let splits = assign_splits(n, [0.7, 0.15, 0.15], rng)?;
    NoisyDataset::new(
        Tensor::matrix(n, dims, data)?,
        labels.clone(),
        labels,
        splits,
        num_classes,
    )
}

/// Options for [`load_and_split`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub label_column: String,
    /// When present, clean labels are read from this column instead of copied.
    #[serde(default)]
    pub clean_label_column: Option<String>,
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
    #[serde(default = "default_true")]
    pub scale: bool,
}

fn default_fractions() -> [f64; 3] {
    [0.7, 0.15, 0.15]
}

fn default_true() -> bool {
    true
}

impl LoadOptions {
    pub fn new(label_column: impl Into<String>) -> Self {
        Self {
            label_column: label_column.into(),
            clean_label_column: None,
            fractions: default_fractions(),
            scale: true,
        }
    }
}

fn parse_label(raw: &str, row: usize, column: &str) -> Result<usize> {
    raw.trim().parse::<usize>().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("`{raw}` is not a non-negative integer label"),
    })
}

/// Reads a CSV with a header row. Every column except the label column(s)
/// is a numeric feature; features are min-max scaled to `[0, 1]` when
/// `opts.scale` is set.
pub fn load_and_split(path: &Path, opts: &LoadOptions, rng: &mut SeededRng) -> Result<NoisyDataset> {
    check_fractions(opts.fractions)?;
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            row: 1,
            column: name.to_string(),
            message: format!("column not found in header {headers:?}"),
        })
    };
    let label_idx = find(&opts.label_column)?;
    let clean_idx = opts.clean_label_column.as_deref().map(find).transpose()?;
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != label_idx && Some(i) != clean_idx)
        .collect();

    let mut data = Vec::new();
    let mut observed = Vec::new();
    let mut clean = Vec::new();
    for (r, record) in reader.records().enumerate() {
        // Row numbers are 1-based file lines, header included.
        let row = r + 2;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        for &c in &feature_cols {
            let raw = record.get(c).unwrap_or("");
            let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
                row,
                column: headers[c].clone(),
                message: format!("`{raw}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: headers[c].clone(),
                    message: "non-finite value".into(),
                });
            }
            data.push(v);
        }
        let y = parse_label(record.get(label_idx).unwrap_or(""), row, &opts.label_column)?;
        observed.push(y);
        clean.push(match clean_idx {
            Some(ci) => parse_label(record.get(ci).unwrap_or(""), row, &headers[ci])?,
            None => y,
        });
    }
    let n = observed.len();
    let d = feature_cols.len();
    if opts.scale && n > 0 {
        for c in 0..d {
            let col = (0..n).map(|i| data[i * d + c]);
            let lo = col.clone().fold(f64::INFINITY, f64::min);
            let hi = col.fold(f64::NEG_INFINITY, f64::max);
            let range = hi - lo;
            for i in 0..n {
                let v = &mut data[i * d + c];
                *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
            }
        }
    }
    let num_classes = observed.iter().chain(&clean).max().map_or(0, |m| m + 1);
    let splits = assign_splits(n, opts.fractions, rng)?;
    NoisyDataset::new(Tensor::matrix(n, d, data)?, observed, clean, splits, num_classes)
}

/// Sidecar metadata written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub num_classes: usize,
    pub seed: u64,
    pub split_fractions: [f64; 3],
    pub corruption: Option<CorruptionSpec>,
    #[serde(default)]
    pub generator: Option<serde_json::Value>,
}

/// Writes features as `x0..x{D-1}`, observed labels as `label` and clean labels as `clean_label`.
pub fn write_csv(ds: &NoisyDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..ds.dim()).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    header.push("clean_label".into());
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.features.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(ds.observed_labels[i].to_string());
        rec.push(ds.clean_labels[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_metadata(meta: &DatasetMetadata, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(meta)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_values() {
        let d = preset_spec("default", 10).unwrap();
        assert_eq!(d.per_class_rate[4], 0.10);
        assert_eq!(d.per_class_rate[9], 0.60);
        assert!(preset_spec("none", 10).unwrap().per_class_rate.iter().all(|&r| r == 0.0));
        assert_eq!(preset_spec("increased", 10).unwrap().per_class_rate[0], 0.20);
        assert_eq!(preset_spec("reduced", 10).unwrap().per_class_rate[9], 0.30);
        assert_eq!(preset_spec("uniform20", 10).unwrap().per_class_rate, vec![0.2; 10]);
        assert!(preset_spec("bogus", 10).is_err());
        assert!(preset_spec("default", 5).is_err());
        assert_eq!(preset_spec("none", 3).unwrap().per_class_rate.len(), 3);
    }

    #[test]
    fn effective_rate_of_default() {
        let d = preset_spec("default", 10).unwrap();
        assert!((d.effective_noise_rate() - 0.21 * 0.9).abs() < 1e-12);
    }

    fn balanced(n_per_class: usize, k: usize) -> NoisyDataset {
        let n = n_per_class * k;
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        NoisyDataset::new(
            Tensor::zeros(vec![n, 1]),
            labels.clone(),
            labels,
            vec![Split::Train; n],
            k,
        )
        .unwrap()
    }

    #[test]
    fn no_corruption_is_identity() {
        let ds = balanced(100, 10);
        let spec = preset_spec("none", 10).unwrap();
        let out = corrupt_labels(&ds, &spec, &mut SeededRng::new(1)).unwrap();
        assert_eq!(out.observed_labels, out.clean_labels);
    }

    #[test]
    fn uniform20_redraw_fraction() {
        let ds = balanced(10_000, 10);
        let spec = preset_spec("uniform20", 10).unwrap();
        // Count redraw events directly with the same stream layout.
        let mut rng = SeededRng::new(2);
        let mut redrawn = 0usize;
        for _ in 0..ds.len() {
            if rng.uniform() < 0.2 {
                redrawn += 1;
            }
            rng.index(10);
        }
        let frac = redrawn as f64 / ds.len() as f64;
        assert!((frac - 0.2).abs() < 0.004, "{frac}");
        // Observed disagreement is rate * (K - 1) / K.
        let out = corrupt_labels(&ds, &spec, &mut SeededRng::new(2)).unwrap();
        let sd = (0.18f64 * 0.82 / ds.len() as f64).sqrt();
        assert!((out.disagreement_rate() - 0.18).abs() < 3.0 * sd);
    }

    #[test]
    fn corruption_length_mismatch() {
        let ds = balanced(5, 4);
        let spec = preset_spec("default", 10).unwrap();
        assert!(corrupt_labels(&ds, &spec, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn corruption_is_pure_in_clean_labels() {
        let ds = balanced(50, 10);
        let spec = preset_spec("default", 10).unwrap();
        let once = corrupt_labels(&ds, &spec, &mut SeededRng::new(4)).unwrap();
        let twice = corrupt_labels(&once, &spec, &mut SeededRng::new(4)).unwrap();
        assert_eq!(once, twice);
        assert_eq!(once.clean_labels, ds.clean_labels);
    }

    #[test]
    fn exclude_original_always_changes() {
        let ds = balanced(200, 10);
        let mut spec = CorruptionSpec::new(vec![1.0; 10]).unwrap();
        spec.redraw = Redraw::ExcludeOriginal;
        let out = corrupt_labels(&ds, &spec, &mut SeededRng::new(5)).unwrap();
        assert_eq!(out.disagreement_rate(), 1.0);
    }

    #[test]
    fn only_selected_splits_are_corrupted() {
        let mut ds = balanced(100, 10);
        ds.resplit([0.5, 0.25, 0.25], &mut SeededRng::new(0)).unwrap();
        let spec = CorruptionSpec::new(vec![1.0; 10]).unwrap();
        let out = corrupt_splits(&ds, &spec, &[Split::Train], &mut SeededRng::new(1)).unwrap();
        for i in ds.indices(Split::Test) {
            assert_eq!(out.observed_labels[i], out.clean_labels[i]);
        }
    }

    #[test]
    fn cluster_shapes_and_splits() {
        let ds = synth_clusters(3, 4, 20, 2.0, &mut SeededRng::new(0)).unwrap();
        assert_eq!(ds.features.shape(), &[60, 4]);
        assert_eq!(ds.observed_labels.len(), 60);
        let counts: Vec<usize> = Split::ALL.iter().map(|s| ds.indices(*s).len()).collect();
        assert_eq!(counts, vec![42, 9, 9]);
        let again = synth_clusters(3, 4, 20, 2.0, &mut SeededRng::new(0)).unwrap();
        assert_eq!(ds, again);
        assert!(synth_clusters(0, 4, 20, 2.0, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn bad_fractions_rejected() {
        let mut ds = balanced(10, 2);
        assert!(ds.resplit([0.5, 0.5, 0.5], &mut SeededRng::new(0)).is_err());
    }
}
