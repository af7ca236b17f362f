//! Heteroscedastic classification under label noise.
//!
//! A small reverse-mode autodiff tape, a latent-utility output layer whose
//! predictive probabilities are Monte Carlo averages of tempered softmaxes,
//! label-corruption tooling, training with noisy-label baselines, calibration
//! and gradient diagnostics, and a seeded experiment harness.

// `!(x > 0.0)` checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod het_head;
pub mod metrics;
pub mod noisy_labels;
pub mod rand_dists;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
