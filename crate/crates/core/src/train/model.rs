//! Leaky-ReLU MLP backbone feeding a [`HetHead`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::het_head::{self, HeadVars, HetHead, HetHeadConfig, HEAD_PARAM_NAMES};
use crate::rand_dists::SeededRng;
use crate::tensor::{matmul_slices, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Hidden widths; the last one is the representation size seen by the head.
    /// Empty means the head reads the raw features.
    pub hidden: Vec<usize>,
    #[serde(default = "default_slope")]
    pub slope: f64,
    /// Dropout rate after each hidden block; missing entries mean no dropout.
    #[serde(default)]
    pub dropout: Vec<f64>,
}

fn default_slope() -> f64 {
    0.01
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            hidden: vec![128],
            slope: default_slope(),
            dropout: Vec::new(),
        }
    }
}

impl MlpSpec {
    pub fn linear() -> Self {
        Self {
            hidden: Vec::new(),
            ..Self::default()
        }
    }

    pub fn representation_dim(&self, input_dim: usize) -> usize {
        self.hidden.last().copied().unwrap_or(input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if self.dropout.len() > self.hidden.len() {
            return Err(Error::invalid("more dropout rates than hidden layers"));
        }
        if self.dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::invalid("dropout rates must be in [0, 1)"));
        }
        Ok(())
    }

    fn dropout_rate(&self, layer: usize) -> f64 {
        self.dropout.get(layer).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in x out`
    pub weight: Tensor,
    pub bias: Tensor,
}

/// MLP backbone plus heteroscedastic head.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub spec: MlpSpec,
    pub layers: Vec<Dense>,
    pub head: HetHead,
}

/// Tape handles for every parameter, in [`Classifier::parameters`] order.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub layers: Vec<(Var, Var)>,
    pub head: HeadVars,
}

impl ModelVars {
    pub fn all(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.layers.iter().flat_map(|(w, b)| [*w, *b]).collect();
        out.extend(self.head.all());
        out
    }
}

impl Classifier {
    /// He-uniform hidden layers, Glorot-uniform head.
    pub fn init(
        spec: &MlpSpec,
        input_dim: usize,
        num_classes: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        spec.validate()?;
        if input_dim == 0 || num_classes == 0 {
            return Err(Error::invalid("input_dim and num_classes must be positive"));
        }
        let mut layers = Vec::with_capacity(spec.hidden.len());
        let mut fan_in = input_dim;
        for &width in &spec.hidden {
            let limit = (6.0 / fan_in as f64).sqrt();
            let data = (0..fan_in * width)
                .map(|_| limit * (2.0 * rng.uniform() - 1.0))
                .collect();
            layers.push(Dense {
                weight: Tensor::matrix(fan_in, width, data)?,
                bias: Tensor::zeros(vec![width]),
            });
            fan_in = width;
        }
        let head = HetHead::init(fan_in, num_classes, rng);
        Ok(Self {
            spec: spec.clone(),
            layers,
            head,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers
            .first()
            .map_or(self.head.input_dim(), |l| l.weight.shape()[0])
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self
            .layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect();
        out.extend(self.head.parameters());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self
            .layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect();
        out.extend(self.head.parameters_mut());
        out
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.layers.len())
            .flat_map(|i| [format!("mlp.{i}.weight"), format!("mlp.{i}.bias")])
            .collect();
        names.extend(HEAD_PARAM_NAMES.iter().map(|s| s.to_string()));
        names
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// Rebuilds a model from named tensors, as stored in a checkpoint.
    pub fn from_named(spec: &MlpSpec, mut named: Vec<(String, Tensor)>) -> Result<Self> {
        spec.validate()?;
        let mut take = |name: &str| -> Result<Tensor> {
            let pos = named
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))?;
            Ok(named.swap_remove(pos).1)
        };
        let mut layers = Vec::with_capacity(spec.hidden.len());
        for i in 0..spec.hidden.len() {
            let weight = take(&format!("mlp.{i}.weight"))?;
            let bias = take(&format!("mlp.{i}.bias"))?;
            if weight.shape().len() != 2
                || weight.shape()[1] != spec.hidden[i]
                || bias.shape() != [spec.hidden[i]]
            {
                return Err(Error::shape("from_named", format!("layer {i} shapes")));
            }
            layers.push(Dense { weight, bias });
        }
        let [a, b, c, d] = HEAD_PARAM_NAMES;
        let head = HetHead::from_parts(take(a)?, take(b)?, take(c)?, take(d)?)?;
        let model = Self {
            spec: spec.clone(),
            layers,
            head,
        };
        let mut width = model.input_dim();
        for l in &model.layers {
            if l.weight.shape()[0] != width {
                return Err(Error::shape("from_named", "layer widths do not chain"));
            }
            width = l.weight.shape()[1];
        }
        if model.head.input_dim() != width {
            return Err(Error::shape("from_named", "head input width"));
        }
        Ok(model)
    }

    /// Representation for a batch of inputs (`N x D_in` to `N x D`), no dropout.
    pub fn representation(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.input_dim() {
            return Err(Error::shape(
                "representation",
                format!("input {:?}, model expects {} features", x.shape(), self.input_dim()),
            ));
        }
        let n = x.rows();
        let mut h = x.clone();
        for layer in &self.layers {
            let (k, m) = (layer.weight.shape()[0], layer.weight.shape()[1]);
            let mut out = matmul_slices(h.data(), layer.weight.data(), n, k, m);
            for row in out.chunks_mut(m) {
                for (v, b) in row.iter_mut().zip(layer.bias.data()) {
                    let z = *v + b;
                    *v = if z > 0.0 { z } else { self.spec.slope * z };
                }
            }
            h = Tensor::matrix(n, m, out)?;
        }
        Ok(h)
    }

    /// MC predictive probabilities, one row per input, with `cfg.eval_samples` draws.
    pub fn predict_proba(
        &self,
        x: &Tensor,
        cfg: &HetHeadConfig,
        rng: &mut SeededRng,
    ) -> Result<Vec<Vec<f64>>> {
        let repr = self.representation(x)?;
        (0..repr.rows())
            .map(|i| self.head.predict_proba_mc(repr.row(i), cfg, rng))
            .collect()
    }

    pub fn attach(&self, tape: &mut Tape) -> ModelVars {
        let layers = self
            .layers
            .iter()
            .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
            .collect();
        let head = self.head.attach(tape);
        ModelVars { layers, head }
    }

    /// Records the backbone; dropout masks are drawn from `rng` when `dropout_rng` is given.
    pub fn forward_representation(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        x: Var,
        mut dropout_rng: Option<&mut SeededRng>,
    ) -> Result<Var> {
        let mut h = x;
        for (i, (w, b)) in vars.layers.iter().enumerate() {
            let lin = tape.matmul(h, *w)?;
            let pre = tape.add(lin, *b)?;
            h = tape.leaky_relu(pre, self.spec.slope)?;
            let p = self.spec.dropout_rate(i);
            if let (Some(rng), true) = (dropout_rng.as_deref_mut(), p > 0.0) {
                let shape = tape.value(h).shape().to_vec();
                let n: usize = shape.iter().product();
                let keep = 1.0 / (1.0 - p);
                let mask = (0..n)
                    .map(|_| if rng.uniform() < p { 0.0 } else { keep })
                    .collect();
                let mask = tape.constant(Tensor::new(shape, mask)?);
                h = tape.mul(h, mask)?;
            }
        }
        Ok(h)
    }

    /// Records the full forward pass and returns `B x K` MC probabilities.
    /// Noise (and dropout masks, in training) come from `rng`.
    pub fn forward_probabilities(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        x: &Tensor,
        cfg: &HetHeadConfig,
        rng: &mut SeededRng,
        training: bool,
    ) -> Result<Var> {
        let xv = tape.constant(x.clone());
        let repr = self.forward_representation(tape, vars, xv, training.then_some(&mut *rng))?;
        let samples = if training {
            cfg.train_samples
        } else {
            cfg.eval_samples
        };
        let draws = match cfg.mode {
            het_head::HeadMode::Heteroscedastic => {
                het_head::draw_noise(cfg.family, samples, x.rows(), cfg.num_classes, rng)
            }
            het_head::HeadMode::Homoscedastic => Tensor::zeros(vec![0, cfg.num_classes]),
        };
        het_head::forward_probabilities(tape, &vars.head, repr, cfg, &draws)
    }
}
