//! Likelihood losses on MC-averaged probabilities.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var, LOG_FLOOR};

fn check_labels(labels: &[usize], batch: usize, k: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::shape(
            "nll",
            format!("{} labels for a batch of {batch}", labels.len()),
        ));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid(format!("label {y} out of range for {k} classes")));
    }
    Ok(())
}

/// Per-example `-log p_y` as a length-`B` node.
pub fn per_example_nll(tape: &mut Tape, probs: Var, labels: &[usize]) -> Result<Var> {
    let shape = tape.value(probs).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::shape("nll", format!("probabilities {shape:?}")));
    }
    let (b, k) = (shape[0], shape[1]);
    check_labels(labels, b, k)?;
    let flat = tape.reshape(probs, vec![b * k])?;
    let picked = tape.index_select(flat, labels.iter().enumerate().map(|(i, &y)| i * k + y).collect())?;
    let logp = tape.log(picked)?;
    tape.scale(logp, -1.0)
}

/// Mean negative log-likelihood of the labels under `B x K` probabilities.
pub fn mc_nll_loss(tape: &mut Tape, probs: Var, labels: &[usize]) -> Result<Var> {
    let per = per_example_nll(tape, probs, labels)?;
    tape.mean(per)
}

/// Weighted mean of per-example losses; weights are treated as constants.
pub fn weighted_mean(tape: &mut Tape, per_example: Var, weights: &[f64]) -> Result<Var> {
    let n = tape.value(per_example).len();
    if weights.len() != n {
        return Err(Error::shape("weighted_mean", format!("{} weights for {n} losses", weights.len())));
    }
    let w = tape.constant(Tensor::vector(weights.to_vec()));
    let prod = tape.mul(per_example, w)?;
    tape.mean(prod)
}

/// `-(1/B) sum_b sum_c t_bc log p_bc` against fixed soft targets.
pub fn soft_cross_entropy(tape: &mut Tape, probs: Var, targets: &Tensor) -> Result<Var> {
    if tape.value(probs).shape() != targets.shape() {
        return Err(Error::shape(
            "soft_cross_entropy",
            format!("{:?} vs {:?}", tape.value(probs).shape(), targets.shape()),
        ));
    }
    let k = targets.cols() as f64;
    let logp = tape.log(probs)?;
    let t = tape.constant(targets.clone());
    let prod = tape.mul(logp, t)?;
    // mean over B*K entries, rescaled to a per-example sum over classes
    let m = tape.mean(prod)?;
    tape.scale(m, -k)
}

/// `-log p_y` with the same floor the tape uses.
pub fn nll_value(probs: &[f64], label: usize) -> f64 {
    -probs[label].ln().max(LOG_FLOOR)
}

/// Mean NLL over rows of probabilities.
pub fn mean_nll(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::shape(
            "mean_nll",
            format!("{} rows, {} labels", probs.len(), labels.len()),
        ));
    }
    let k = probs[0].len();
    check_labels(labels, probs.len(), k)?;
    Ok(probs.iter().zip(labels).map(|(p, &y)| nll_value(p, y)).sum::<f64>() / labels.len() as f64)
}

/// Heteroscedastic regression NLL `(y - f)^2 / (2 sigma^2) + 0.5 log sigma^2`, averaged.
/// With `sigma = 1` this is half the mean squared error.
pub fn hetero_regression_nll(y: &[f64], f: &[f64], sigma: &[f64]) -> Result<f64> {
    if y.len() != f.len() || y.len() != sigma.len() || y.is_empty() {
        return Err(Error::shape("hetero_regression_nll", "length mismatch"));
    }
    if sigma.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::invalid("sigma must be positive"));
    }
    let total: f64 = y
        .iter()
        .zip(f)
        .zip(sigma)
        .map(|((&y, &f), &s)| {
            (y - f).powi(2) / (2.0 * s * s) + 0.5 * (s * s).ln()
        })
        .sum();
    Ok(total / y.len() as f64)
}
