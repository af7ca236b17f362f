//! Training loop for heteroscedastic and homoscedastic classifiers, with
//! optional noisy-label baselines.
//!
//! Training is minibatch Adam (or SGD) on the MC likelihood, early-stopped on
//! validation accuracy against the observed labels. The best validation
//! checkpoint is returned.

pub mod baselines;
pub mod loss;
pub mod model;
pub mod optim;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::het_head::HetHeadConfig;
use crate::metrics::{accuracy, GradVarTracker};
use crate::noisy_labels::{NoisyDataset, Split, SplitData};
use crate::rand_dists::SeededRng;
use crate::tensor::{argmax, Tape, Tensor, Var};

pub use baselines::{
    bootstrap_targets, coteaching_select, mentornet_het_equivalence_check, mentornet_regularizer,
    self_paced_weight, BootstrapConfig, CoTeachingConfig, MentorNetConfig, SelfPaced,
};
pub use loss::{hetero_regression_nll, mc_nll_loss, mean_nll, per_example_nll};
pub use model::{Classifier, MlpSpec, ModelVars};
pub use optim::{Optimizer, OptimizerConfig};

/// Stream used for the fixed validation-noise draws inside [`fit`].
const VALID_STREAM: u64 = 0x0076_616c_6964;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Baseline {
    #[default]
    None,
    Bootstrap(BootstrapConfig),
    MentorNet(MentorNetConfig),
    CoTeaching(CoTeachingConfig),
}

impl Baseline {
    pub fn name(&self) -> &'static str {
        match self {
            Baseline::None => "none",
            Baseline::Bootstrap(_) => "bootstrap",
            Baseline::MentorNet(_) => "mentornet",
            Baseline::CoTeaching(_) => "coteaching",
        }
    }

    /// Fills an unset noise rate (MentorNet, co-teaching) with `rate`.
    pub fn with_default_noise_rate(mut self, rate: f64) -> Self {
        match &mut self {
            Baseline::MentorNet(c) if c.noise_rate.is_none() => c.noise_rate = Some(rate),
            Baseline::CoTeaching(c) if c.noise_rate.is_none() => c.noise_rate = Some(rate),
            _ => {}
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Baseline::None => Ok(()),
            Baseline::Bootstrap(c) if (0.0..=1.0).contains(&c.beta) => Ok(()),
            Baseline::Bootstrap(c) => Err(Error::invalid(format!(
                "bootstrap beta must be in [0, 1], got {}",
                c.beta
            ))),
            Baseline::MentorNet(c) => c.validate(),
            Baseline::CoTeaching(c) => c.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Seeds the fixed validation noise used for early stopping.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub baseline: Baseline,
    /// Overrides `eval_samples` for the per-epoch validation pass.
    #[serde(default)]
    pub valid_samples: Option<usize>,
    #[serde(default = "default_true")]
    pub track_dispersion: bool,
    #[serde(default = "default_grad_decay")]
    pub grad_ema_decay: f64,
}

fn default_max_epochs() -> usize {
    1000
}
fn default_patience() -> usize {
    10
}
fn default_batch_size() -> usize {
    128
}
fn default_true() -> bool {
    true
}
fn default_grad_decay() -> f64 {
    0.9
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            batch_size: default_batch_size(),
            seed: 0,
            baseline: Baseline::None,
            valid_samples: None,
            track_dispersion: true,
            grad_ema_decay: default_grad_decay(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::invalid("patience must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.valid_samples == Some(0) {
            return Err(Error::invalid("valid_samples must be at least 1"));
        }
        if !(self.grad_ema_decay > 0.0 && self.grad_ema_decay < 1.0) {
            return Err(Error::invalid("grad_ema_decay must be in (0, 1)"));
        }
        self.baseline.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_accuracy: f64,
    pub log_dispersion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: Classifier,
    pub history: Vec<EpochRecord>,
    /// Epoch of the returned checkpoint; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_valid_accuracy: Option<f64>,
}

/// Predicted class per row using MC probabilities.
pub fn predict_classes(
    model: &Classifier,
    x: &Tensor,
    cfg: &HetHeadConfig,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    Ok(model.predict_proba(x, cfg, rng)?.iter().map(|p| argmax(p)).collect())
}

struct Learner {
    model: Classifier,
    opt: Optimizer,
    tracker: Option<GradVarTracker>,
}

impl Learner {
    fn new(model: Classifier, opt_cfg: &OptimizerConfig, train_cfg: &TrainConfig) -> Result<Self> {
        let tracker = if train_cfg.track_dispersion {
            Some(GradVarTracker::new(train_cfg.grad_ema_decay)?)
        } else {
            None
        };
        Ok(Self {
            model,
            opt: Optimizer::new(*opt_cfg)?,
            tracker,
        })
    }

    fn forward(
        &self,
        x: &Tensor,
        cfg: &HetHeadConfig,
        rng: &mut SeededRng,
    ) -> Result<(Tape, ModelVars, Var)> {
        let mut tape = Tape::new();
        let vars = self.model.attach(&mut tape);
        let probs = self
            .model
            .forward_probabilities(&mut tape, &vars, x, cfg, rng, true)?;
        Ok((tape, vars, probs))
    }

    fn step(&mut self, tape: &Tape, vars: &ModelVars, loss: Var) -> Result<f64> {
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        let grads = tape.backward(loss)?;
        let grads: Vec<&Tensor> = vars
            .all()
            .into_iter()
            .map(|v| grads.wrt(v))
            .collect::<Result<_>>()?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        if let Some(tracker) = &mut self.tracker {
            let flat: Vec<f64> = grads.iter().flat_map(|g| g.data().iter().copied()).collect();
            tracker.update(&flat)?;
        }
        self.opt.step(&mut self.model.parameters_mut(), &grads)?;
        Ok(value)
    }

    fn dispersion(&self) -> Option<f64> {
        self.tracker
            .as_ref()
            .and_then(|t| t.log_index_of_dispersion().ok())
    }
}

fn valid_accuracy(
    model: &Classifier,
    valid: &SplitData,
    cfg: &HetHeadConfig,
    train_cfg: &TrainConfig,
) -> Result<f64> {
    let mut cfg = cfg.clone();
    if let Some(s) = train_cfg.valid_samples {
        cfg.eval_samples = s;
    }
    let mut rng = SeededRng::with_stream(train_cfg.seed, VALID_STREAM);
    let pred = predict_classes(model, &valid.features, &cfg, &mut rng)?;
    accuracy(&pred, &valid.observed)
}

fn as_divergence(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::NonFinite(_) => Error::Divergence { epoch, batch },
        other => other,
    }
}

/// Trains a classifier on the train split of `data`, early-stopping on the
/// valid split, and returns the best-validation checkpoint with its history.
pub fn fit(
    mlp: &MlpSpec,
    head_cfg: &HetHeadConfig,
    data: &NoisyDataset,
    train_cfg: &TrainConfig,
    opt_cfg: &OptimizerConfig,
    rng: &mut SeededRng,
) -> Result<TrainedModel> {
    head_cfg.validate()?;
    train_cfg.validate()?;
    opt_cfg.validate()?;
    if head_cfg.num_classes != data.num_classes {
        return Err(Error::invalid(format!(
            "head has {} classes, dataset {}",
            head_cfg.num_classes, data.num_classes
        )));
    }
    let train = data.view(Split::Train)?;
    let valid = data.view(Split::Valid)?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::invalid("fit needs nonempty train and valid splits"));
    }

    let init = Classifier::init(mlp, data.dim(), data.num_classes, rng)?;
    let mut learner = Learner::new(init.clone(), opt_cfg, train_cfg)?;
    let mut partner = match train_cfg.baseline {
        Baseline::CoTeaching(_) => {
            let b = Classifier::init(mlp, data.dim(), data.num_classes, rng)?;
            Some(Learner::new(b, opt_cfg, train_cfg)?)
        }
        _ => None,
    };
    let mut self_paced = match train_cfg.baseline {
        Baseline::MentorNet(c) => Some(SelfPaced::new(c)?),
        _ => None,
    };

    let mut best = TrainedModel {
        model: init,
        history: Vec::new(),
        best_epoch: None,
        best_valid_accuracy: None,
    };
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..train_cfg.max_epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let x = train.features.select_rows(chunk)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train.observed[i]).collect();
            let batch_loss = (|| -> Result<f64> {
                let (mut tape, vars, probs) = learner.forward(&x, head_cfg, rng)?;
                match train_cfg.baseline {
                    Baseline::None => {
                        let loss = mc_nll_loss(&mut tape, probs, &labels)?;
                        learner.step(&tape, &vars, loss)
                    }
                    Baseline::Bootstrap(c) => {
                        let targets = bootstrap_targets(&labels, tape.value(probs), c.beta)?;
                        let loss = loss::soft_cross_entropy(&mut tape, probs, &targets)?;
                        learner.step(&tape, &vars, loss)
                    }
                    Baseline::MentorNet(_) => {
                        let per = per_example_nll(&mut tape, probs, &labels)?;
                        let sp = self_paced.as_mut().expect("self-paced state");
                        let weights = sp.weights(tape.value(per).data(), epoch)?;
                        let loss = loss::weighted_mean(&mut tape, per, &weights)?;
                        learner.step(&tape, &vars, loss)
                    }
                    Baseline::CoTeaching(c) => {
                        let other = partner.as_mut().expect("co-teaching partner");
                        let (mut tape_b, vars_b, probs_b) = other.forward(&x, head_cfg, rng)?;
                        let per_a = per_example_nll(&mut tape, probs, &labels)?;
                        let per_b = per_example_nll(&mut tape_b, probs_b, &labels)?;
                        let (for_a, for_b) = coteaching_select(
                            tape.value(per_a).data(),
                            tape_b.value(per_b).data(),
                            epoch,
                            &c,
                        )?;
                        let sel_a = tape.index_select(per_a, for_a)?;
                        let loss_a = tape.mean(sel_a)?;
                        let sel_b = tape_b.index_select(per_b, for_b)?;
                        let loss_b = tape_b.mean(sel_b)?;
                        other.step(&tape_b, &vars_b, loss_b)?;
                        learner.step(&tape, &vars, loss_a)
                    }
                }
            })()
            .map_err(|e| as_divergence(e, epoch, batch_idx))?;
            loss_sum += batch_loss * chunk.len() as f64;
        }

        let acc = valid_accuracy(&learner.model, &valid, head_cfg, train_cfg)?;
        best.history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            valid_accuracy: acc,
            log_dispersion: learner.dispersion(),
        });
        if best.best_valid_accuracy.is_none_or(|b| acc > b) {
            best.best_valid_accuracy = Some(acc);
            best.best_epoch = Some(epoch);
            best.model = learner.model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= train_cfg.patience {
                break;
            }
        }
    }
    Ok(best)
}
