//! Evaluation metrics, post-hoc temperature scaling, the softmax-relaxation
//! bias estimate, gradient dispersion tracking and paired t-tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::het_head::{HetHead, HetHeadConfig};
use crate::noisy_labels::SplitData;
use crate::rand_dists::SeededRng;
use crate::tensor::{argmax, tempered_softmax_into, LOG_FLOOR};
use crate::train::{loss::nll_value, Classifier};

pub const ECE_BINS: usize = 15;
pub const DISPERSION_EPS: f64 = 1e-12;

/// Fraction of positions where `pred == labels`.
pub fn accuracy(pred: &[usize], labels: &[usize]) -> Result<f64> {
    if pred.is_empty() || pred.len() != labels.len() {
        return Err(Error::shape(
            "accuracy",
            format!("{} predictions, {} labels", pred.len(), labels.len()),
        ));
    }
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Binned `sum_b |B_b|/n * |acc(B_b) - conf(B_b)|` over equal-width bins on `(0, 1]`.
pub fn expected_calibration_error(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    if confidences.is_empty() || confidences.len() != correct.len() {
        return Err(Error::invalid("ece needs equal-length nonempty inputs"));
    }
    if bins == 0 {
        return Err(Error::invalid("ece needs at least one bin"));
    }
    if confidences.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::invalid("confidences must lie in [0, 1]"));
    }
    let mut conf_sum = vec![0.0; bins];
    let mut hit_sum = vec![0.0; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = ((c * bins as f64).ceil() as usize).clamp(1, bins) - 1;
        conf_sum[b] += c;
        if ok {
            hit_sum[b] += 1.0;
        }
    }
    // |B_b|/n * |acc - conf| = |sum(correct) - sum(conf)| / n
    let gap: f64 = conf_sum.iter().zip(&hit_sum).map(|(c, h)| (h - c).abs()).sum();
    Ok(gap / confidences.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub noisy_nll: f64,
    pub noisy_accuracy: f64,
    pub clean_accuracy: f64,
    pub ece: f64,
    pub n_examples: usize,
    pub eval_samples: usize,
}

/// Metrics from precomputed probability rows.
pub fn report_from_probabilities(
    probs: &[Vec<f64>],
    observed: &[usize],
    clean: &[usize],
    eval_samples: usize,
) -> Result<MetricsReport> {
    if probs.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    if clean.len() != observed.len() {
        return Err(Error::shape("evaluate", "observed and clean label counts differ"));
    }
    let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let conf: Vec<f64> = probs
        .iter()
        .zip(&pred)
        .map(|(p, &j)| p[j].clamp(0.0, 1.0))
        .collect();
    let correct: Vec<bool> = pred.iter().zip(observed).map(|(a, b)| a == b).collect();
    Ok(MetricsReport {
        noisy_nll: crate::train::mean_nll(probs, observed)?,
        noisy_accuracy: accuracy(&pred, observed)?,
        clean_accuracy: accuracy(&pred, clean)?,
        ece: expected_calibration_error(&conf, &correct, ECE_BINS)?,
        n_examples: probs.len(),
        eval_samples,
    })
}

/// MC probabilities for a split, with noise drawn from `eval_seed`.
pub fn split_probabilities(
    model: &Classifier,
    cfg: &HetHeadConfig,
    split: &SplitData,
    eval_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if split.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    model.predict_proba(&split.features, cfg, &mut SeededRng::new(eval_seed))
}

/// Evaluates NLL, accuracies and ECE on one split.
pub fn evaluate(
    model: &Classifier,
    cfg: &HetHeadConfig,
    split: &SplitData,
    eval_seed: u64,
) -> Result<MetricsReport> {
    let probs = split_probabilities(model, cfg, split, eval_seed)?;
    report_from_probabilities(&probs, &split.observed, &split.clean, cfg.eval_samples)
}

/// `p_c^(1/T) / sum_k p_k^(1/T)`, computed in log space.
pub fn apply_temperature(probs: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::invalid("post-hoc temperature must be positive"));
    }
    if !probs.iter().any(|&p| p > 0.0) {
        return Err(Error::invalid("probability row has no positive entry"));
    }
    let logits: Vec<f64> = probs
        .iter()
        .map(|&p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
        .collect();
    let mut out = vec![0.0; probs.len()];
    tempered_softmax_into(&logits, temperature, &mut out);
    Ok(out)
}

fn scaled_nll(probs: &[Vec<f64>], labels: &[usize], temperature: f64) -> Result<f64> {
    let mut total = 0.0;
    for (p, &y) in probs.iter().zip(labels) {
        total += nll_value(&apply_temperature(p, temperature)?, y);
    }
    Ok(total / probs.len() as f64)
}

/// Golden-section search over `log T` in `[ln 0.05, ln 20]` for the validation
/// NLL of rescaled probabilities. Falls back to `T = 1` unless strictly better.
pub fn fit_platt_temperature(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::invalid("platt scaling needs matching nonempty inputs"));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= probs[0].len()) {
        return Err(Error::invalid(format!("label {y} out of range")));
    }
    let f = |log_t: f64| scaled_nll(probs, labels, log_t.exp());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.05f64.ln(), 20f64.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    let (log_t, best) = if fc < fd { (c, fc) } else { (d, fd) };
    Ok(if best < f(0.0)? { log_t.exp() } else { 1.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasEstimate {
    pub value: f64,
    pub samples: usize,
    pub tau: f64,
    pub std_error: f64,
}

/// MC average of `KL(onehot(argmax u) || softmax(u / tau))`, which reduces to
/// `-log softmax(u / tau)` at the argmax.
pub fn bias_from_loc_scale(
    loc: &[f64],
    scale: &[f64],
    tau: f64,
    samples: usize,
    family: crate::rand_dists::NoiseFamily,
    rng: &mut SeededRng,
) -> Result<BiasEstimate> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    if samples == 0 {
        return Err(Error::invalid("bias estimate needs at least one sample"));
    }
    if loc.is_empty() || loc.len() != scale.len() {
        return Err(Error::shape("estimate_bias", "location and scale lengths differ"));
    }
    let k = loc.len();
    let mut u = vec![0.0; k];
    let mut sm = vec![0.0; k];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        family.fill(rng, &mut u);
        for ((u, &m), &s) in u.iter_mut().zip(loc).zip(scale) {
            *u = m + s * *u;
        }
        tempered_softmax_into(&u, tau, &mut sm);
        let kl = -sm[argmax(&u)].ln().max(LOG_FLOOR);
        sum += kl;
        sum_sq += kl * kl;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = if samples > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(BiasEstimate {
        value: mean.max(0.0),
        samples,
        tau,
        std_error: (var / n).sqrt(),
    })
}

/// Bias of the tempered relaxation for one representation under `head`.
pub fn estimate_bias(
    head: &HetHead,
    repr: &[f64],
    cfg: &HetHeadConfig,
    tau: f64,
    samples: usize,
    rng: &mut SeededRng,
) -> Result<BiasEstimate> {
    let (loc, scale) = head.location_scale(repr, cfg.mode)?;
    bias_from_loc_scale(&loc, &scale, tau, samples, cfg.family, rng)
}

/// Elementwise EMA of gradient first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVarTracker {
    pub decay: f64,
    pub eps: f64,
    mean: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl GradVarTracker {
    pub fn new(decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::invalid("tracker decay must be in (0, 1)"));
        }
        Ok(Self {
            decay,
            eps: DISPERSION_EPS,
            mean: Vec::new(),
            second: Vec::new(),
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Folds in one flattened gradient. The first snapshot initializes both moments.
    pub fn update(&mut self, grad: &[f64]) -> Result<()> {
        if self.steps == 0 {
            self.mean = grad.to_vec();
            self.second = grad.iter().map(|g| g * g).collect();
        } else {
            if grad.len() != self.mean.len() {
                return Err(Error::shape(
                    "GradVarTracker",
                    format!("{} entries, tracking {}", grad.len(), self.mean.len()),
                ));
            }
            let d = self.decay;
            for ((m, s), &g) in self.mean.iter_mut().zip(&mut self.second).zip(grad) {
                *m = d * *m + (1.0 - d) * g;
                *s = d * *s + (1.0 - d) * g * g;
            }
        }
        self.steps += 1;
        Ok(())
    }

    /// Per-entry variance, floored at 0.
    pub fn variance(&self) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.second)
            .map(|(m, s)| (s - m * m).max(0.0))
            .collect()
    }

    /// Mean over entries of `log(max(var, eps) / (|mean| + eps))`.
    pub fn log_index_of_dispersion(&self) -> Result<f64> {
        if self.steps == 0 || self.mean.is_empty() {
            return Err(Error::invalid("gradient tracker has no updates"));
        }
        let total: f64 = self
            .variance()
            .iter()
            .zip(&self.mean)
            .map(|(v, m)| (v.max(self.eps) / (m.abs() + self.eps)).ln())
            .sum();
        Ok(total / self.mean.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p_value: f64,
    pub df: f64,
    pub mean_difference: f64,
}

/// Two-tailed paired t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid("paired t-test needs two equal-length samples of size >= 2"));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(Error::invalid("paired differences have zero variance"));
    }
    let t = mean / (var / n).sqrt();
    let df = n - 1.0;
    let p_value = statrs::function::beta::beta_reg(df / 2.0, 0.5, df / (df + t * t));
    Ok(TTest {
        t,
        p_value,
        df,
        mean_difference: mean,
    })
}

/// `*`, `†`, `‡` for p below 0.05, 0.01, 0.001; empty otherwise.
pub fn significance_marker(p: f64) -> &'static str {
    if p < 0.001 {
        "‡"
    } else if p < 0.01 {
        "†"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rand_dists::NoiseFamily;

    #[test]
    fn ece_examples() {
        let v = expected_calibration_error(&[0.9, 0.6], &[true, false], 10).unwrap();
        assert!((v - 0.35).abs() < 1e-15);
        assert_eq!(expected_calibration_error(&[1.0; 4], &[true; 4], 15).unwrap(), 0.0);
        let v = expected_calibration_error(&[0.75; 4], &[true, true, true, false], 15).unwrap();
        assert_eq!(v, 0.0);
        assert!(expected_calibration_error(&[], &[], 15).is_err());
    }

    #[test]
    fn accuracy_counts() {
        assert_eq!(accuracy(&[0, 1, 2, 2], &[0, 1, 1, 2]).unwrap(), 0.75);
        assert!(accuracy(&[0], &[]).is_err());
    }

    #[test]
    fn uniform_predictor_report() {
        let probs = vec![vec![0.1; 10]; 4];
        let r = report_from_probabilities(&probs, &[0, 0, 3, 5], &[0, 1, 2, 3], 1).unwrap();
        assert!((r.noisy_nll - 10f64.ln()).abs() < 1e-12);
        // ties resolve to class 0
        assert_eq!(r.noisy_accuracy, 0.5);
        assert_eq!(r.clean_accuracy, 0.25);
    }

    #[test]
    fn temperature_rescale_keeps_argmax() {
        let p = [0.2, 0.5, 0.3, 0.0];
        for t in [0.05, 0.7, 3.0, 20.0] {
            let q = apply_temperature(&p, t).unwrap();
            assert_eq!(argmax(&q), 1);
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(q[3] < 1e-300);
        }
        assert!(apply_temperature(&[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn overconfident_predictor_gets_softened() {
        let probs: Vec<Vec<f64>> = (0..40)
            .map(|i| if i % 2 == 0 { vec![0.999, 0.001] } else { vec![0.001, 0.999] })
            .collect();
        let labels: Vec<usize> = (0..40).map(|i| if i % 4 < 2 { 0 } else { 1 }).collect();
        let t = fit_platt_temperature(&probs, &labels).unwrap();
        assert!(t > 1.0, "{t}");
        assert!(scaled_nll(&probs, &labels, t).unwrap() < scaled_nll(&probs, &labels, 1.0).unwrap());
    }

    #[test]
    fn bias_single_sample_oracle() {
        // sigma = 0: u = [1, 0], KL = -log sigmoid(1)
        let b = bias_from_loc_scale(&[1.0, 0.0], &[0.0, 0.0], 1.0, 1, NoiseFamily::Gaussian, &mut SeededRng::new(0))
            .unwrap();
        assert!((b.value - (1.0 + (-1f64).exp()).ln()).abs() < 1e-15);
        assert!((b.value - 0.313262).abs() < 1e-6);
        assert!(bias_from_loc_scale(&[1.0], &[0.0], 0.0, 1, NoiseFamily::Gaussian, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn tracker_examples() {
        let mut t = GradVarTracker::new(0.9).unwrap();
        assert!(t.log_index_of_dispersion().is_err());
        for _ in 0..100 {
            t.update(&[2.0]).unwrap();
        }
        let v = t.log_index_of_dispersion().unwrap();
        assert!((v - (1e-12f64 / (2.0 + 1e-12)).ln()).abs() < 1e-9);

        let mut t = GradVarTracker::new(0.9).unwrap();
        for i in 0..1000 {
            t.update(&[if i % 2 == 0 { 1.0 } else { -1.0 }]).unwrap();
        }
        assert!(t.log_index_of_dispersion().unwrap() > 2.0);
        assert!(t.update(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn t_test_examples() {
        let r = paired_t_test(&[1.0, 3.0], &[0.0, 0.0]).unwrap();
        assert!((r.t - 2.0).abs() < 1e-12);
        // df = 1 is Cauchy: p = 1 - 2 atan(2) / pi
        let p = 1.0 - 2.0 * 2f64.atan() / std::f64::consts::PI;
        assert!((r.p_value - p).abs() < 1e-10);
        assert!((r.p_value - 0.2952).abs() < 1e-4);
        assert!(paired_t_test(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(paired_t_test(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn markers() {
        assert_eq!(significance_marker(0.2), "");
        assert_eq!(significance_marker(0.04), "*");
        assert_eq!(significance_marker(0.009), "†");
        assert_eq!(significance_marker(0.0009), "‡");
    }
}
