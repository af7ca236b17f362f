//! Noisy-label baselines: soft bootstrapping, self-paced MentorNet and co-teaching.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_beta() -> f64 {
    0.8
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { beta: default_beta() }
    }
}

/// `beta * onehot(label) + (1 - beta) * probs`, row by row.
pub fn bootstrap_targets(labels: &[usize], probs: &Tensor, beta: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("bootstrap beta must be in [0, 1], got {beta}")));
    }
    if probs.shape().len() != 2 || probs.rows() != labels.len() {
        return Err(Error::shape(
            "bootstrap_targets",
            format!("{} labels for probabilities {:?}", labels.len(), probs.shape()),
        ));
    }
    let k = probs.cols();
    let mut out = probs.data().iter().map(|p| (1.0 - beta) * p).collect::<Vec<_>>();
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::invalid(format!("label {y} out of range for {k} classes")));
        }
        out[i * k + y] += beta;
    }
    Tensor::new(probs.shape().to_vec(), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MentorNetConfig {
    pub lambda2: f64,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "default_decay")]
    pub decay: f64,
    /// Fraction of mislabelled examples; `None` is filled in from the corruption spec.
    #[serde(default)]
    pub noise_rate: Option<f64>,
    /// Rescale each batch's weights to mean 1 before averaging. Off by default.
    #[serde(default)]
    pub renormalize: bool,
}

fn default_decay() -> f64 {
    0.9
}

pub const MENTORNET_LAMBDA2_GRID: [f64; 4] = [0.0, 0.5, 1.0, 2.0];
pub const MENTORNET_BURN_IN_GRID: [usize; 3] = [0, 5, 10];

impl MentorNetConfig {
    pub fn new(lambda2: f64, burn_in: usize, noise_rate: f64) -> Self {
        Self {
            lambda2,
            burn_in,
            decay: default_decay(),
            noise_rate: Some(noise_rate),
            renormalize: false,
        }
    }

    pub fn quantile(&self) -> Result<f64> {
        let rate = self
            .noise_rate
            .ok_or_else(|| Error::invalid("mentornet noise_rate is not set"))?;
        Ok(1.0 - rate)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::invalid("mentornet decay must be in (0, 1)"));
        }
        if !(self.lambda2 >= 0.0) {
            return Err(Error::invalid("mentornet lambda2 must be non-negative"));
        }
        let q = self.quantile()?;
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::invalid(format!(
                "mentornet quantile 1 - noise_rate must be in (0, 1), got {q}"
            )));
        }
        Ok(())
    }
}

/// Linear self-paced weight: 1 below `lambda1`, ramping to 0 over `lambda2`.
pub fn self_paced_weight(loss: f64, lambda1: f64, lambda2: f64) -> f64 {
    if loss <= lambda1 {
        1.0
    } else if lambda2 > 0.0 {
        (1.0 - (loss - lambda1) / lambda2).max(0.0)
    } else {
        0.0
    }
}

/// Linearly interpolated sample quantile, `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Running state of the self-paced weighting: the `lambda1` moving average.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfPaced {
    pub config: MentorNetConfig,
    pub lambda1: Option<f64>,
}

impl SelfPaced {
    pub fn new(config: MentorNetConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            lambda1: None,
        })
    }

    /// Updates `lambda1` from this batch and returns per-example weights.
    /// The moving average is tracked through burn-in; weights are 1 until it ends.
    pub fn weights(&mut self, losses: &[f64], epoch: usize) -> Result<Vec<f64>> {
        if losses.is_empty() {
            return Err(Error::invalid("self-paced weights need a nonempty batch"));
        }
        let q = quantile(losses, self.config.quantile()?);
        let d = self.config.decay;
        let lambda1 = match self.lambda1 {
            Some(prev) => d * prev + (1.0 - d) * q,
            None => q,
        };
        self.lambda1 = Some(lambda1);
        if epoch < self.config.burn_in {
            return Ok(vec![1.0; losses.len()]);
        }
        let mut w: Vec<f64> = losses
            .iter()
            .map(|&l| self_paced_weight(l, lambda1, self.config.lambda2))
            .collect();
        let total: f64 = w.iter().sum();
        if self.config.renormalize && total > 0.0 {
            let scale = w.len() as f64 / total;
            w.iter_mut().for_each(|v| *v *= scale);
        }
        Ok(w)
    }
}

/// Regularizer under which the weighted squared-error objective matches the
/// heteroscedastic regression objective at `v = exp(-m) / 2`.
pub fn mentornet_regularizer(v: f64) -> f64 {
    0.5 * (-v.ln() - std::f64::consts::LN_2)
}

/// Max over `i` of `|v r^2 + G(v) - (exp(-m) r^2 / 2 + m / 2)|` with `v = exp(-m) / 2`.
pub fn mentornet_het_equivalence_check(residuals: &[f64], log_vars: &[f64]) -> f64 {
    residuals
        .iter()
        .zip(log_vars)
        .map(|(&r, &m)| {
            let v = 0.5 * (-m).exp();
            let mentor = v * r * r + mentornet_regularizer(v);
            let het = 0.5 * (-m).exp() * r * r + 0.5 * m;
            (mentor - het).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoTeachingConfig {
    #[serde(default)]
    pub noise_rate: Option<f64>,
    #[serde(default = "default_ramp")]
    pub ramp_epochs: usize,
}

fn default_ramp() -> usize {
    10
}

impl CoTeachingConfig {
    pub fn new(noise_rate: f64) -> Self {
        Self {
            noise_rate: Some(noise_rate),
            ramp_epochs: default_ramp(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.noise_rate {
            Some(r) if (0.0..1.0).contains(&r) => Ok(()),
            Some(r) => Err(Error::invalid(format!("co-teaching noise_rate must be in [0, 1), got {r}"))),
            None => Err(Error::invalid("co-teaching noise_rate is not set")),
        }
    }

    /// `R(T) = 1 - noise_rate * min(T / T_k, 1)`.
    pub fn keep_fraction(&self, epoch: usize) -> f64 {
        let rate = self.noise_rate.unwrap_or(0.0);
        let ramp = if self.ramp_epochs == 0 {
            1.0
        } else {
            (epoch as f64 / self.ramp_epochs as f64).min(1.0)
        };
        1.0 - rate * ramp
    }

    pub fn keep_count(&self, epoch: usize, batch: usize) -> usize {
        // the small slack keeps exact products like 0.8 * 10 from rounding up
        ((self.keep_fraction(epoch) * batch as f64 - 1e-9).ceil() as usize).clamp(1, batch)
    }
}

fn smallest(losses: &[f64], keep: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..losses.len()).collect();
    idx.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    idx.truncate(keep);
    idx.sort_unstable();
    idx
}

/// Returns `(indices model A trains on, indices model B trains on)`; each
/// network's small-loss picks go to the other one.
pub fn coteaching_select(
    losses_a: &[f64],
    losses_b: &[f64],
    epoch: usize,
    cfg: &CoTeachingConfig,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if losses_a.is_empty() {
        return Err(Error::invalid("co-teaching selection needs a nonempty batch"));
    }
    if losses_a.len() != losses_b.len() {
        return Err(Error::shape(
            "coteaching_select",
            format!("{} vs {} losses", losses_a.len(), losses_b.len()),
        ));
    }
    let keep = cfg.keep_count(epoch, losses_a.len());
    Ok((smallest(losses_b, keep), smallest(losses_a, keep)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bootstrap_example() {
        let probs = Tensor::filled(vec![1, 10], 0.1);
        let t = bootstrap_targets(&[0], &probs, 0.8).unwrap();
        assert!((t.data()[0] - 0.82).abs() < 1e-15);
        assert!(t.data()[1..].iter().all(|&v| (v - 0.02).abs() < 1e-15));
        assert_eq!(bootstrap_targets(&[3], &probs, 1.0).unwrap().data()[3], 1.0);
        assert_eq!(bootstrap_targets(&[3], &probs, 0.0).unwrap(), probs);
        assert!(bootstrap_targets(&[0], &probs, 1.5).is_err());
    }

    #[test]
    fn self_paced_examples() {
        assert_eq!(self_paced_weight(2.0, 1.0, 2.0), 0.5);
        assert_eq!(self_paced_weight(2.0, 1.0, 0.0), 0.0);
        assert_eq!(self_paced_weight(0.5, 1.0, 0.0), 1.0);
        assert_eq!(self_paced_weight(10.0, 1.0, 2.0), 0.0);
    }

    #[test]
    fn lambda1_tracks_quantile_ema() {
        let mut sp = SelfPaced::new(MentorNetConfig::new(0.0, 1, 0.5)).unwrap();
        let w = sp.weights(&[1.0, 2.0, 3.0], 0).unwrap();
        assert_eq!(w, vec![1.0; 3]);
        assert_eq!(sp.lambda1, Some(2.0));
        let w = sp.weights(&[1.0, 3.0, 5.0], 1).unwrap();
        // 0.9 * 2 + 0.1 * 3
        assert!((sp.lambda1.unwrap() - 2.1).abs() < 1e-15);
        assert_eq!(w, vec![1.0, 0.0, 0.0]);
        assert!(sp.weights(&[], 2).is_err());
    }

    #[test]
    fn renormalized_weights_average_to_one() {
        let mut cfg = MentorNetConfig::new(0.0, 0, 0.5);
        cfg.renormalize = true;
        let mut sp = SelfPaced::new(cfg).unwrap();
        // lambda1 = 2 keeps the first two examples
        let w = sp.weights(&[1.0, 2.0, 3.0, 4.0], 0).unwrap();
        assert_eq!(w, vec![2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn config_invariants() {
        assert!(SelfPaced::new(MentorNetConfig::new(0.5, 0, 0.0)).is_err());
        let mut c = MentorNetConfig::new(0.5, 0, 0.2);
        c.decay = 1.0;
        assert!(c.validate().is_err());
        assert!(CoTeachingConfig::new(1.0).validate().is_err());
    }

    #[test]
    fn equivalence_identity() {
        assert_eq!(mentornet_het_equivalence_check(&[1.0], &[0.0]), 0.0);
        let r: Vec<f64> = (0..50).map(|i| i as f64 * 0.3 - 7.0).collect();
        let m: Vec<f64> = (0..50).map(|i| (i as f64 * 0.77).sin() * 5.0).collect();
        assert!(mentornet_het_equivalence_check(&r, &m) < 1e-9);
    }

    #[test]
    fn coteaching_examples() {
        let cfg = CoTeachingConfig::new(0.2);
        let losses: Vec<f64> = (0..10).map(|i| (9 - i) as f64).collect();
        let (a, b) = coteaching_select(&losses, &losses, 0, &cfg).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a, b);
        let (a, _) = coteaching_select(&losses, &losses, 12, &cfg).unwrap();
        assert_eq!(a, (2..10).collect::<Vec<_>>());
        assert!(coteaching_select(&[], &[], 0, &cfg).is_err());
    }

    #[test]
    fn coteaching_is_crosswise() {
        let cfg = CoTeachingConfig::new(0.5);
        let la = [0.0, 1.0, 2.0, 3.0];
        let lb = [3.0, 2.0, 1.0, 0.0];
        let (for_a, for_b) = coteaching_select(&la, &lb, 10, &cfg).unwrap();
        assert_eq!(for_a, vec![2, 3]);
        assert_eq!(for_b, vec![0, 1]);
    }
}
