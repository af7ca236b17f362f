//! Heteroscedastic output layer.
//!
//! Each class gets a latent utility `u_c = f_c(x) + sigma_c(x) * eps_c` with
//! `eps_c` drawn from a standard location-scale family. The observed label is
//! the argmax of the utilities. Training replaces the argmax by a softmax at
//! temperature `tau` and averages the softmax over `S` reparameterized draws;
//! the averaged probabilities (not log-probabilities) feed the likelihood.
//!
//! `f` and `sigma` are linear maps of a shared representation; `sigma` goes
//! through a softplus so it stays positive. Homoscedastic mode runs the same
//! code with `sigma` forced to zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rand_dists::{NoiseFamily, SeededRng};
use crate::tensor::{argmax, sigmoid, softplus, tempered_softmax_into, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    #[default]
    Heteroscedastic,
    Homoscedastic,
}

impl std::str::FromStr for HeadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "heteroscedastic" | "het" => Ok(HeadMode::Heteroscedastic),
            "homoscedastic" | "hom" => Ok(HeadMode::Homoscedastic),
            other => Err(Error::invalid(format!("unknown head mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HetHeadConfig {
    pub num_classes: usize,
    pub temperature: f64,
    pub train_samples: usize,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    #[serde(default)]
    pub family: NoiseFamily,
    #[serde(default)]
    pub mode: HeadMode,
}

fn default_eval_samples() -> usize {
    1000
}

impl HetHeadConfig {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            temperature: 1.0,
            train_samples: 10,
            eval_samples: default_eval_samples(),
            family: NoiseFamily::Gaussian,
            mode: HeadMode::Heteroscedastic,
        }
    }

    pub fn homoscedastic(mut self) -> Self {
        self.mode = HeadMode::Homoscedastic;
        self
    }

    pub fn with_temperature(mut self, tau: f64) -> Self {
        self.temperature = tau;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        check_tau(self.temperature)?;
        if self.train_samples == 0 || self.eval_samples == 0 {
            return Err(Error::invalid("sample counts must be at least 1"));
        }
        Ok(())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("temperature must be positive, got {tau}")))
    }
}

fn check_samples(samples: usize) -> Result<()> {
    if samples == 0 {
        Err(Error::invalid("sample count must be at least 1"))
    } else {
        Ok(())
    }
}

/// `S x K` latent utilities for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilitySample {
    pub utilities: Tensor,
}

impl UtilitySample {
    pub fn samples(&self) -> usize {
        self.utilities.rows()
    }

    pub fn sample(&self, s: usize) -> &[f64] {
        self.utilities.row(s)
    }
}

/// Linear location and softplus-scale branches over a `D`-dimensional representation.
#[derive(Debug, Clone, PartialEq)]
pub struct HetHead {
    /// `D x K`
    pub mu_weight: Tensor,
    /// `K`
    pub mu_bias: Tensor,
    /// `D x K`
    pub sigma_weight: Tensor,
    /// `K`
    pub sigma_bias: Tensor,
}

pub const HEAD_PARAM_NAMES: [&str; 4] = [
    "head.mu.weight",
    "head.mu.bias",
    "head.sigma.weight",
    "head.sigma.bias",
];

impl HetHead {
    /// Glorot-uniform weights, zero biases.
    pub fn init(input_dim: usize, num_classes: usize, rng: &mut SeededRng) -> Self {
        let limit = (6.0 / (input_dim + num_classes) as f64).sqrt();
        let mut weight = || {
            let data = (0..input_dim * num_classes)
                .map(|_| limit * (2.0 * rng.uniform() - 1.0))
                .collect();
            Tensor::new(vec![input_dim, num_classes], data).expect("shape")
        };
        let mu_weight = weight();
        let sigma_weight = weight();
        Self {
            mu_weight,
            mu_bias: Tensor::zeros(vec![num_classes]),
            sigma_weight,
            sigma_bias: Tensor::zeros(vec![num_classes]),
        }
    }

    /// Builds a head from raw parts, validating shapes.
    pub fn from_parts(
        mu_weight: Tensor,
        mu_bias: Tensor,
        sigma_weight: Tensor,
        sigma_bias: Tensor,
    ) -> Result<Self> {
        let head = Self {
            mu_weight,
            mu_bias,
            sigma_weight,
            sigma_bias,
        };
        let (d, k) = (head.input_dim(), head.num_classes());
        let ok = head.mu_weight.shape() == [d, k]
            && head.sigma_weight.shape() == [d, k]
            && head.mu_bias.shape() == [k]
            && head.sigma_bias.shape() == [k];
        if !ok {
            return Err(Error::shape("het_head", "inconsistent branch shapes"));
        }
        Ok(head)
    }

    pub fn input_dim(&self) -> usize {
        self.mu_weight.shape()[0]
    }

    pub fn num_classes(&self) -> usize {
        self.mu_weight.shape().get(1).copied().unwrap_or(0)
    }

    pub fn parameters(&self) -> [&Tensor; 4] {
        [
            &self.mu_weight,
            &self.mu_bias,
            &self.sigma_weight,
            &self.sigma_bias,
        ]
    }

    pub fn parameters_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.mu_weight,
            &mut self.mu_bias,
            &mut self.sigma_weight,
            &mut self.sigma_bias,
        ]
    }

    /// `(f(x), sigma(x))` for one representation vector.
    pub fn location_scale(&self, repr: &[f64], mode: HeadMode) -> Result<(Vec<f64>, Vec<f64>)> {
        let (d, k) = (self.input_dim(), self.num_classes());
        if repr.len() != d {
            return Err(Error::shape(
                "het_head",
                format!("representation has {} dims, head expects {d}", repr.len()),
            ));
        }
        let affine = |w: &Tensor, b: &Tensor| {
            let mut out = b.data().to_vec();
            for (i, &r) in repr.iter().enumerate() {
                for (o, wv) in out.iter_mut().zip(&w.data()[i * k..(i + 1) * k]) {
                    *o += r * wv;
                }
            }
            out
        };
        let loc = affine(&self.mu_weight, &self.mu_bias);
        let scale = match mode {
            HeadMode::Heteroscedastic => affine(&self.sigma_weight, &self.sigma_bias)
                .into_iter()
                .map(softplus)
                .collect(),
            HeadMode::Homoscedastic => vec![0.0; k],
        };
        Ok((loc, scale))
    }

    pub fn latent_utilities(
        &self,
        repr: &[f64],
        cfg: &HetHeadConfig,
        samples: usize,
        rng: &mut SeededRng,
    ) -> Result<UtilitySample> {
        check_samples(samples)?;
        let (loc, scale) = self.location_scale(repr, cfg.mode)?;
        let k = loc.len();
        let mut data = vec![0.0; samples * k];
        for row in data.chunks_mut(k) {
            cfg.family.fill(rng, row);
            for ((u, f), s) in row.iter_mut().zip(&loc).zip(&scale) {
                *u = f + s * *u;
            }
        }
        Ok(UtilitySample {
            utilities: Tensor::new(vec![samples, k], data)?,
        })
    }

    /// Tempered-softmax MC estimate with `cfg.eval_samples` draws.
    pub fn predict_proba_mc(
        &self,
        repr: &[f64],
        cfg: &HetHeadConfig,
        rng: &mut SeededRng,
    ) -> Result<Vec<f64>> {
        let (loc, scale) = self.location_scale(repr, cfg.mode)?;
        mc_probabilities(&loc, &scale, cfg.temperature, cfg.eval_samples, cfg.family, rng)
    }

    /// Frequency of each class being the argmax utility.
    pub fn predict_proba_hard(
        &self,
        repr: &[f64],
        cfg: &HetHeadConfig,
        rng: &mut SeededRng,
    ) -> Result<Vec<f64>> {
        let (loc, scale) = self.location_scale(repr, cfg.mode)?;
        hard_probabilities(&loc, &scale, cfg.eval_samples, cfg.family, rng)
    }

    /// Registers the head parameters on a tape.
    pub fn attach(&self, tape: &mut Tape) -> HeadVars {
        HeadVars {
            mu_weight: tape.param(self.mu_weight.clone()),
            mu_bias: tape.param(self.mu_bias.clone()),
            sigma_weight: tape.param(self.sigma_weight.clone()),
            sigma_bias: tape.param(self.sigma_bias.clone()),
        }
    }
}

/// Tape handles for the four head parameters, in [`HEAD_PARAM_NAMES`] order.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub mu_weight: Var,
    pub mu_bias: Var,
    pub sigma_weight: Var,
    pub sigma_bias: Var,
}

impl HeadVars {
    pub fn all(&self) -> [Var; 4] {
        [self.mu_weight, self.mu_bias, self.sigma_weight, self.sigma_bias]
    }
}

fn check_loc_scale(loc: &[f64], scale: &[f64]) -> Result<()> {
    if loc.is_empty() || loc.len() != scale.len() {
        return Err(Error::shape(
            "het_head",
            format!("location has {} entries, scale {}", loc.len(), scale.len()),
        ));
    }
    if scale.iter().any(|&s| !(s >= 0.0)) {
        return Err(Error::invalid("scale must be non-negative"));
    }
    Ok(())
}

/// MC estimate from explicit standard draws (`S x K`, row-major).
pub fn mc_probabilities_from_draws(
    loc: &[f64],
    scale: &[f64],
    tau: f64,
    draws: &[f64],
) -> Result<Vec<f64>> {
    check_tau(tau)?;
    check_loc_scale(loc, scale)?;
    let k = loc.len();
    if draws.is_empty() || !draws.len().is_multiple_of(k) {
        return Err(Error::shape("mc_probabilities", "draws must be S x K with S >= 1"));
    }
    if scale.iter().all(|&s| s == 0.0) {
        let mut p = vec![0.0; k];
        tempered_softmax_into(loc, tau, &mut p);
        return Ok(p);
    }
    let mut acc = vec![0.0; k];
    let mut u = vec![0.0; k];
    let mut sm = vec![0.0; k];
    for eps in draws.chunks(k) {
        for c in 0..k {
            u[c] = loc[c] + scale[c] * eps[c];
        }
        tempered_softmax_into(&u, tau, &mut sm);
        for (a, p) in acc.iter_mut().zip(&sm) {
            *a += p;
        }
    }
    let s = (draws.len() / k) as f64;
    acc.iter_mut().for_each(|a| *a /= s);
    Ok(acc)
}

/// Argmax frequencies from explicit standard draws (`S x K`, row-major).
pub fn hard_probabilities_from_draws(loc: &[f64], scale: &[f64], draws: &[f64]) -> Result<Vec<f64>> {
    check_loc_scale(loc, scale)?;
    let k = loc.len();
    if draws.is_empty() || !draws.len().is_multiple_of(k) {
        return Err(Error::shape("hard_probabilities", "draws must be S x K with S >= 1"));
    }
    let mut counts = vec![0usize; k];
    let mut u = vec![0.0; k];
    for eps in draws.chunks(k) {
        for c in 0..k {
            u[c] = loc[c] + scale[c] * eps[c];
        }
        counts[argmax(&u)] += 1;
    }
    let s = (draws.len() / k) as f64;
    Ok(counts.into_iter().map(|c| c as f64 / s).collect())
}

/// Tempered-softmax MC estimate of the class probabilities.
pub fn mc_probabilities(
    loc: &[f64],
    scale: &[f64],
    tau: f64,
    samples: usize,
    family: NoiseFamily,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    check_tau(tau)?;
    check_samples(samples)?;
    check_loc_scale(loc, scale)?;
    let k = loc.len();
    if scale.iter().all(|&s| s == 0.0) {
        return mc_probabilities_from_draws(loc, scale, tau, &vec![0.0; k]);
    }
    let mut acc = vec![0.0; k];
    let mut u = vec![0.0; k];
    let mut sm = vec![0.0; k];
    for _ in 0..samples {
        family.fill(rng, &mut u);
        for c in 0..k {
            u[c] = loc[c] + scale[c] * u[c];
        }
        tempered_softmax_into(&u, tau, &mut sm);
        for (a, p) in acc.iter_mut().zip(&sm) {
            *a += p;
        }
    }
    acc.iter_mut().for_each(|a| *a /= samples as f64);
    Ok(acc)
}

/// Argmax-frequency estimate of the generative class probabilities.
pub fn hard_probabilities(
    loc: &[f64],
    scale: &[f64],
    samples: usize,
    family: NoiseFamily,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    check_samples(samples)?;
    check_loc_scale(loc, scale)?;
    let k = loc.len();
    let mut counts = vec![0usize; k];
    let mut u = vec![0.0; k];
    for _ in 0..samples {
        family.fill(rng, &mut u);
        for c in 0..k {
            u[c] = loc[c] + scale[c] * u[c];
        }
        counts[argmax(&u)] += 1;
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / samples as f64)
        .collect())
}

/// Sigmoid-smoothed probability that the utility difference `loc + scale * eps` is positive.
pub fn binary_mc_probability(
    loc: f64,
    scale: f64,
    tau: f64,
    samples: usize,
    family: NoiseFamily,
    rng: &mut SeededRng,
) -> Result<f64> {
    check_tau(tau)?;
    check_samples(samples)?;
    check_loc_scale(&[loc], &[scale])?;
    if scale == 0.0 {
        return Ok(sigmoid(loc / tau));
    }
    let total: f64 = (0..samples)
        .map(|_| sigmoid((loc + scale * family.sample(rng)) / tau))
        .sum();
    Ok(total / samples as f64)
}

/// Binary variant: one location and one softplus scale for the utility difference.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryHead {
    pub loc_weight: Tensor,
    pub loc_bias: f64,
    pub scale_weight: Tensor,
    pub scale_bias: f64,
}

impl BinaryHead {
    pub fn init(input_dim: usize, rng: &mut SeededRng) -> Self {
        let limit = (6.0 / (input_dim + 1) as f64).sqrt();
        let mut w = || {
            Tensor::vector(
                (0..input_dim)
                    .map(|_| limit * (2.0 * rng.uniform() - 1.0))
                    .collect(),
            )
        };
        let loc_weight = w();
        let scale_weight = w();
        Self {
            loc_weight,
            loc_bias: 0.0,
            scale_weight,
            scale_bias: 0.0,
        }
    }

    pub fn location_scale(&self, repr: &[f64], mode: HeadMode) -> Result<(f64, f64)> {
        if repr.len() != self.loc_weight.len() {
            return Err(Error::shape(
                "binary_head",
                format!("representation has {} dims, head expects {}", repr.len(), self.loc_weight.len()),
            ));
        }
        let dot = |w: &Tensor| w.data().iter().zip(repr).map(|(a, b)| a * b).sum::<f64>();
        let loc = dot(&self.loc_weight) + self.loc_bias;
        let scale = match mode {
            HeadMode::Heteroscedastic => softplus(dot(&self.scale_weight) + self.scale_bias),
            HeadMode::Homoscedastic => 0.0,
        };
        Ok((loc, scale))
    }

    /// `p_1` with `cfg.eval_samples` draws at `cfg.temperature`.
    pub fn predict_binary_mc(
        &self,
        repr: &[f64],
        cfg: &HetHeadConfig,
        rng: &mut SeededRng,
    ) -> Result<f64> {
        let (loc, scale) = self.location_scale(repr, cfg.mode)?;
        binary_mc_probability(loc, scale, cfg.temperature, cfg.eval_samples, cfg.family, rng)
    }
}

/// Draws for one minibatch, laid out sample-major as `(S * B) x K`.
pub fn draw_noise(
    family: NoiseFamily,
    samples: usize,
    batch: usize,
    num_classes: usize,
    rng: &mut SeededRng,
) -> Tensor {
    let mut data = vec![0.0; samples * batch * num_classes];
    family.fill(rng, &mut data);
    Tensor::new(vec![samples * batch, num_classes], data).expect("shape")
}

/// Records the MC-averaged tempered-softmax probabilities (`B x K`) for a
/// batch of representations (`B x D`).
///
/// `draws` must be `(S * B) x K` in the layout produced by [`draw_noise`];
/// homoscedastic mode ignores it.
pub fn forward_probabilities(
    tape: &mut Tape,
    head: &HeadVars,
    repr: Var,
    cfg: &HetHeadConfig,
    draws: &Tensor,
) -> Result<Var> {
    check_tau(cfg.temperature)?;
    let batch = tape.value(repr).rows();
    let k = cfg.num_classes;
    let lin = tape.matmul(repr, head.mu_weight)?;
    let loc = tape.add(lin, head.mu_bias)?;
    if cfg.mode == HeadMode::Homoscedastic {
        // sigma = 0 makes every sample identical, so the S-average is the single softmax.
        return tape.tempered_softmax(loc, cfg.temperature);
    }
    let rows = draws.rows();
    if rows == 0 || !rows.is_multiple_of(batch) || draws.cols() != k {
        return Err(Error::shape(
            "forward_probabilities",
            format!("draws {:?} for batch {batch} and {k} classes", draws.shape()),
        ));
    }
    let samples = rows / batch;
    let lin = tape.matmul(repr, head.sigma_weight)?;
    let pre = tape.add(lin, head.sigma_bias)?;
    let scale = tape.softplus(pre)?;
    let tiled: Vec<usize> = (0..samples).flat_map(|_| 0..batch).collect();
    let loc_t = tape.index_select(loc, tiled.clone())?;
    let scale_t = tape.index_select(scale, tiled)?;
    let eps = tape.constant(draws.clone());
    let u = crate::rand_dists::reparameterize(tape, loc_t, scale_t, eps)?;
    let sm = tape.tempered_softmax(u, cfg.temperature)?;
    let stacked = tape.reshape(sm, vec![samples, batch * k])?;
    let mean = tape.mean_leading(stacked)?;
    tape.reshape(mean, vec![batch, k])
}
