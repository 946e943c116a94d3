//! Per-document training losses.
//!
//! The probability-space functions are the reference definitions. Training
//! goes through [`interpolated_from_logits`], which evaluates the same
//! quantities from logits so saturated scores cannot produce `log(0)`.

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::nnkit::{sigmoid, softplus};

/// Weight of the ranking term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
}

impl LossConfig {
    pub fn new(lambda: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(ModelError::InvalidConfig(format!(
                "lambda must lie in [0, 1], got {lambda}"
            )));
        }
        Ok(LossConfig { lambda })
    }
}

/// Mean binary cross-entropy of `probs` against `relevant`.
pub fn bce_loss(probs: &[f64], relevant: &[bool]) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    let total: f64 = probs
        .iter()
        .zip(relevant)
        .map(|(&p, &r)| if r { -p.ln() } else { -(1.0 - p).ln() })
        .sum();
    total / probs.len() as f64
}

/// `−(1/s) Σ_rel Σ_irrel (p_rel − p_irrel)`, zero when either side is empty.
pub fn ranking_loss(probs: &[f64], relevant: &[bool]) -> f64 {
    let rel: Vec<f64> = probs.iter().zip(relevant).filter(|(_, &r)| r).map(|(&p, _)| p).collect();
    let irr: Vec<f64> = probs.iter().zip(relevant).filter(|(_, &r)| !r).map(|(&p, _)| p).collect();
    if rel.is_empty() || irr.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for a in &rel {
        for b in &irr {
            total += a - b;
        }
    }
    -total / (rel.len() * irr.len()) as f64
}

pub fn total_loss(bce: f64, rank: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * bce + lambda * rank
}

/// Loss and its gradient with respect to each logit.
pub fn interpolated_from_logits(logits: &[f64], relevant: &[bool], lambda: f64) -> (f64, Vec<f64>) {
    let n = logits.len();
    let mut grad = vec![0.0; n];
    if n == 0 {
        return (0.0, grad);
    }
    let mut bce = 0.0;
    for (i, (&z, &r)) in logits.iter().zip(relevant).enumerate() {
        let y = if r { 1.0 } else { 0.0 };
        bce += softplus(z) - y * z;
        grad[i] += (1.0 - lambda) * (sigmoid(z) - y) / n as f64;
    }
    bce /= n as f64;
    let n_rel = relevant.iter().filter(|&&r| r).count();
    let n_irr = n - n_rel;
    let mut rank = 0.0;
    if n_rel > 0 && n_irr > 0 {
        // The double sum factors into a difference of means.
        let (mut mean_rel, mut mean_irr) = (0.0, 0.0);
        for (i, (&z, &r)) in logits.iter().zip(relevant).enumerate() {
            let p = sigmoid(z);
            let dp = p * (1.0 - p);
            if r {
                mean_rel += p / n_rel as f64;
                grad[i] -= lambda * dp / n_rel as f64;
            } else {
                mean_irr += p / n_irr as f64;
                grad[i] += lambda * dp / n_irr as f64;
            }
        }
        rank = -(mean_rel - mean_irr);
    }
    (total_loss(bce, rank, lambda), grad)
}
