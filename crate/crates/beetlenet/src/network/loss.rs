//! Focal loss over softmax probabilities.

use crate::error::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Focal loss shape parameters. `alpha` weights every class uniformly;
/// `gamma` down-weights well-classified samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FocalLossParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalLossParams {
    fn default() -> Self {
        FocalLossParams {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

impl FocalLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

const PT_FLOOR: f64 = 1e-12;

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let (n, c) = logits.dim();
    let mut probs = Array2::zeros((n, c));
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for j in 0..c {
            let e = (row[j] - max).exp();
            probs[[i, j]] = e;
            total += e;
        }
        for j in 0..c {
            probs[[i, j]] /= total;
        }
    }
    probs
}

fn check_batch(logits: &Array2<f64>, targets: &[usize]) -> Result<()> {
    let (n, c) = logits.dim();
    if n == 0 {
        return Err(Error::Config("focal loss needs a non-empty batch".into()));
    }
    if targets.len() != n {
        return Err(Error::Config(format!(
            "batch has {n} rows but {} targets",
            targets.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::Config(format!("target class {t} out of range 0..{c}")));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logits in loss".into()));
    }
    Ok(())
}

/// Mean focal loss over the batch: `-alpha * (1 - p_t)^gamma * ln(p_t)`.
pub fn focal_loss(logits: &Array2<f64>, targets: &[usize], params: &FocalLossParams) -> Result<f64> {
    Ok(focal_loss_with_grad(logits, targets, params)?.0)
}

/// Mean focal loss plus its gradient with respect to the logits.
pub fn focal_loss_with_grad(
    logits: &Array2<f64>,
    targets: &[usize],
    params: &FocalLossParams,
) -> Result<(f64, Array2<f64>)> {
    params.validate()?;
    check_batch(logits, targets)?;
    let (n, c) = logits.dim();
    let probs = softmax_rows(logits);
    let mut total = 0.0;
    let mut grad = Array2::zeros((n, c));
    for i in 0..n {
        let t = targets[i];
        let pt = probs[[i, t]].max(PT_FLOOR);
        let one_minus = 1.0 - pt;
        total += -params.alpha * one_minus.powf(params.gamma) * pt.ln();
        // dL/d p_t for one sample (before softmax chain rule).
        let poly_term = if params.gamma == 0.0 {
            0.0
        } else {
            params.gamma * one_minus.powf(params.gamma - 1.0) * pt.ln()
        };
        let dl_dpt = params.alpha * (poly_term - one_minus.powf(params.gamma) / pt);
        // Softmax Jacobian: d p_t / d z_j = p_t (delta_tj - p_j).
        for j in 0..c {
            let delta = if j == t { 1.0 } else { 0.0 };
            grad[[i, j]] = dl_dpt * pt * (delta - probs[[i, j]]) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}
