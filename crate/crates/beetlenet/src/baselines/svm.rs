//! One-vs-rest support vector machines trained with sequential minimal
//! optimization on a precomputed Gram matrix.

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::stage::{AttackStage, NUM_STAGES};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// SVM kernel; the RBF width is `exp(-gamma * ||a - b||^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

/// KKT tolerance the SMO loop optimizes to.
pub const KKT_TOLERANCE: f64 = 1e-3;
/// Hard cap on SMO iterations before declaring non-convergence.
pub const ITERATION_CAP: usize = 1_000_000;

/// One binary (class vs rest) machine: support vectors with their signed
/// dual coefficients plus the bias.
#[derive(Debug, Clone)]
pub struct BinarySvm {
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` per support vector.
    pub coefficients: Vec<f64>,
    pub bias: f64,
    pub kernel: Kernel,
}

impl BinarySvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.coefficients)
            .map(|(sv, c)| c * self.kernel.eval(sv, x))
            .sum::<f64>()
            + self.bias
    }
}

/// One-vs-rest ensemble, one binary machine per attack stage.
#[derive(Debug, Clone)]
pub struct SvmModel {
    pub binaries: Vec<BinarySvm>,
}

/// Per-sample KKT residual of a binary problem at the current solution.
/// Zero (within tolerance) at every sample certifies convergence.
pub fn kkt_residual(alpha: f64, c: f64, y: f64, decision: f64) -> f64 {
    let margin = y * decision;
    if alpha <= 0.0 {
        (1.0 - margin).max(0.0)
    } else if alpha >= c {
        (margin - 1.0).max(0.0)
    } else {
        (margin - 1.0).abs()
    }
}

struct SmoResult {
    alphas: Vec<f64>,
    bias: f64,
    iterations: usize,
}

struct SmoProblem<'a> {
    gram: &'a [Vec<f64>],
    y: &'a [f64],
    c: f64,
    alphas: Vec<f64>,
    bias: f64,
}

impl SmoProblem<'_> {
    fn decision(&self, i: usize) -> f64 {
        let mut acc = self.bias;
        for j in 0..self.y.len() {
            if self.alphas[j] != 0.0 {
                acc += self.alphas[j] * self.y[j] * self.gram[j][i];
            }
        }
        acc
    }

    /// One SMO pair update; true if either alpha moved.
    fn try_update(&mut self, i: usize, j: usize) -> bool {
        let e_i = self.decision(i) - self.y[i];
        let e_j = self.decision(j) - self.y[j];
        let (a_i_old, a_j_old) = (self.alphas[i], self.alphas[j]);
        let c = self.c;
        let (lo, hi) = if (self.y[i] - self.y[j]).abs() < f64::EPSILON {
            ((a_i_old + a_j_old - c).max(0.0), (a_i_old + a_j_old).min(c))
        } else {
            ((a_j_old - a_i_old).max(0.0), (c + a_j_old - a_i_old).min(c))
        };
        if hi - lo < 1e-12 {
            return false;
        }
        let eta = 2.0 * self.gram[i][j] - self.gram[i][i] - self.gram[j][j];
        if eta >= -1e-12 {
            return false;
        }
        let a_j = (a_j_old - self.y[j] * (e_i - e_j) / eta).clamp(lo, hi);
        if (a_j - a_j_old).abs() < 1e-8 {
            return false;
        }
        let a_i = a_i_old + self.y[i] * self.y[j] * (a_j_old - a_j);
        self.alphas[i] = a_i;
        self.alphas[j] = a_j;
        let b1 = self.bias - e_i
            - self.y[i] * (a_i - a_i_old) * self.gram[i][i]
            - self.y[j] * (a_j - a_j_old) * self.gram[i][j];
        let b2 = self.bias - e_j
            - self.y[i] * (a_i - a_i_old) * self.gram[i][j]
            - self.y[j] * (a_j - a_j_old) * self.gram[j][j];
        self.bias = if a_i > 0.0 && a_i < c {
            b1
        } else if a_j > 0.0 && a_j < c {
            b2
        } else {
            (b1 + b2) / 2.0
        };
        true
    }
}

/// SMO on a precomputed Gram matrix. Deterministic: partner scanning starts
/// at a seeded random offset but covers every candidate, so a sweep with no
/// updates means no pair can make progress.
fn smo(gram: &[Vec<f64>], y: &[f64], c: f64, seed: u64) -> Result<SmoResult> {
    let n = y.len();
    let mut problem = SmoProblem {
        gram,
        y,
        c,
        alphas: vec![0.0f64; n],
        bias: 0.0,
    };
    let mut rng = seeded_rng(seed);
    let mut iterations = 0usize;
    // The loop optimizes past the certified tolerance so bias averaging
    // cannot push residuals back over it.
    let opt_tol = KKT_TOLERANCE / 2.0;

    loop {
        let mut changed = 0usize;
        for i in 0..n {
            let r_i = y[i] * (problem.decision(i) - y[i]);
            let violates = (r_i < -opt_tol && problem.alphas[i] < c)
                || (r_i > opt_tol && problem.alphas[i] > 0.0);
            if !violates {
                continue;
            }
            let start = rng.gen_range(0..n);
            for offset in 0..n {
                let j = (start + offset) % n;
                if j == i {
                    continue;
                }
                iterations += 1;
                if iterations > ITERATION_CAP {
                    return Err(Error::Numeric(format!(
                        "SMO failed to converge within {ITERATION_CAP} iterations \
                         (n = {n}, C = {c}, {changed} updates in the last sweep)"
                    )));
                }
                if problem.try_update(i, j) {
                    changed += 1;
                    break;
                }
            }
        }
        if changed == 0 {
            break;
        }
    }

    // Recompute the bias from interior support vectors, which pin the
    // margin exactly; fall back to the running estimate when none exist.
    let interior: Vec<usize> = (0..n)
        .filter(|&i| problem.alphas[i] > 1e-9 && problem.alphas[i] < c - 1e-9)
        .collect();
    if !interior.is_empty() {
        let mut acc = 0.0;
        for &i in &interior {
            acc += y[i] - (problem.decision(i) - problem.bias);
        }
        problem.bias = acc / interior.len() as f64;
    }

    Ok(SmoResult {
        alphas: problem.alphas,
        bias: problem.bias,
        iterations,
    })
}

fn fit_binary(
    features: &[Vec<f64>],
    y: &[f64],
    c: f64,
    kernel: Kernel,
    seed: u64,
) -> Result<BinarySvm> {
    let n = features.len();
    let mut gram = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in i..n {
            let k = kernel.eval(&features[i], &features[j]);
            gram[i][j] = k;
            gram[j][i] = k;
        }
    }
    let result = smo(&gram, y, c, seed)?;
    let mut support_vectors = Vec::new();
    let mut coefficients = Vec::new();
    for i in 0..n {
        if result.alphas[i] > 1e-12 {
            support_vectors.push(features[i].clone());
            coefficients.push(result.alphas[i] * y[i]);
        }
    }
    let _ = result.iterations;
    Ok(BinarySvm {
        support_vectors,
        coefficients,
        bias: result.bias,
        kernel,
    })
}

/// Fit four one-vs-rest machines. Requires at least two classes present.
pub fn svm_fit(
    features: &[Vec<f64>],
    labels: &[AttackStage],
    c: f64,
    kernel: Kernel,
) -> Result<SvmModel> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Data("SVM needs matching non-empty features and labels".into()));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Config(format!("C must be positive, got {c}")));
    }
    let distinct = {
        let mut seen = [false; NUM_STAGES];
        labels.iter().for_each(|l| seen[l.ordinal()] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::Data("SVM requires at least two classes present".into()));
    }
    let mut binaries = Vec::with_capacity(NUM_STAGES);
    for ord in 0..NUM_STAGES {
        let y: Vec<f64> = labels
            .iter()
            .map(|l| if l.ordinal() == ord { 1.0 } else { -1.0 })
            .collect();
        binaries.push(fit_binary(features, &y, c, kernel, ord as u64)?);
    }
    Ok(SvmModel { binaries })
}

/// Argmax of the one-vs-rest decision values; ties to the lowest ordinal.
pub fn svm_predict(model: &SvmModel, x: &[f64]) -> Result<AttackStage> {
    if model.binaries.len() != NUM_STAGES {
        return Err(Error::Config("malformed SVM model".into()));
    }
    let decisions: Vec<f64> = model.binaries.iter().map(|b| b.decision(x)).collect();
    let mut best = 0usize;
    for i in 1..NUM_STAGES {
        if decisions[i] > decisions[best] {
            best = i;
        }
    }
    Ok(AttackStage::from_ordinal(best).unwrap())
}
