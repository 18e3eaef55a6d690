//! t-SNE from first principles: perplexity-calibrated Gaussian affinities,
//! Student-t low-dimensional kernel, KL gradient descent with momentum and
//! early exaggeration.

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::stage::AttackStage;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// t-SNE settings; defaults follow common practice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        TsneParams {
            perplexity: 30.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: 200.0,
            seed: 0,
        }
    }
}

/// A 2-D embedding with per-point labels and the final objective value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Embedding2D {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<AttackStage>,
    pub kl_divergence: f64,
}

impl Embedding2D {
    pub fn with_labels(mut self, labels: Vec<AttackStage>) -> Result<Self> {
        if labels.len() != self.points.len() {
            return Err(Error::Data(format!(
                "{} labels for {} embedded points",
                labels.len(),
                self.points.len()
            )));
        }
        self.labels = labels;
        Ok(self)
    }
}

/// Tolerance on the per-row perplexity after bandwidth search.
pub const PERPLEXITY_TOLERANCE: f64 = 1e-3;

fn squared_distances(features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = features.len();
    let mut d = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dist: f64 = features[i]
                .iter()
                .zip(&features[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[i][j] = dist;
            d[j][i] = dist;
        }
    }
    d
}

/// Conditional row P_{j|i} for one precision beta, with its perplexity.
fn row_for_beta(distances: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    let n = distances.len();
    let mut p = vec![0.0f64; n];
    let mut sum = 0.0;
    for j in 0..n {
        if j != i {
            p[j] = (-beta * distances[j]).exp();
            sum += p[j];
        }
    }
    if sum <= 0.0 {
        return (p, 0.0);
    }
    // Shannon entropy in nats: H = ln(sum) + beta * E[d].
    let mut weighted = 0.0;
    for j in 0..n {
        if j != i {
            weighted += distances[j] * p[j];
        }
    }
    let entropy = sum.ln() + beta * weighted / sum;
    for v in p.iter_mut() {
        *v /= sum;
    }
    (p, entropy.exp())
}

/// Binary-search each row's Gaussian precision until its perplexity matches
/// the target within [`PERPLEXITY_TOLERANCE`].
pub fn calibrated_conditionals(
    distances: &[Vec<f64>],
    perplexity: f64,
) -> Result<Vec<Vec<f64>>> {
    let n = distances.len();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut beta = 1.0f64;
        let mut beta_min = f64::NEG_INFINITY;
        let mut beta_max = f64::INFINITY;
        let mut result = None;
        for _ in 0..200 {
            let (p, perp) = row_for_beta(&distances[i], i, beta);
            if (perp - perplexity).abs() < PERPLEXITY_TOLERANCE {
                result = Some(p);
                break;
            }
            if perp > perplexity {
                beta_min = beta;
                beta = if beta_max.is_infinite() {
                    beta * 2.0
                } else {
                    (beta + beta_max) / 2.0
                };
            } else {
                beta_max = beta;
                beta = if beta_min.is_infinite() {
                    beta / 2.0
                } else {
                    (beta + beta_min) / 2.0
                };
            }
        }
        match result {
            Some(p) => rows.push(p),
            None => {
                return Err(Error::Numeric(format!(
                    "perplexity {perplexity} unattainable for point {i} \
                     (degenerate distances?)"
                )))
            }
        }
    }
    Ok(rows)
}

fn symmetrize(conditionals: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = conditionals.len();
    let mut p = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..n {
            p[i][j] = ((conditionals[i][j] + conditionals[j][i]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    p
}

fn kl_divergence(p: &[Vec<f64>], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let mut q_unnorm = vec![vec![0.0f64; n]; n];
    let mut z = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let w = 1.0 / (1.0 + dx * dx + dy * dy);
            q_unnorm[i][j] = w;
            q_unnorm[j][i] = w;
            z += 2.0 * w;
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let q = (q_unnorm[i][j] / z).max(1e-12);
                kl += p[i][j] * (p[i][j] / q).ln();
            }
        }
    }
    kl
}

/// Embed `features` into two dimensions. Deterministic per seed; labels on
/// the result are empty until attached with [`Embedding2D::with_labels`].
pub fn tsne_embed(features: &[Vec<f64>], params: &TsneParams) -> Result<Embedding2D> {
    let n = features.len();
    if !(params.perplexity >= 1.0) {
        return Err(Error::Config(format!(
            "perplexity must be >= 1, got {}",
            params.perplexity
        )));
    }
    if (n as f64) <= 3.0 * params.perplexity {
        return Err(Error::Config(format!(
            "t-SNE needs more than 3x perplexity points: n = {n}, perplexity = {}",
            params.perplexity
        )));
    }
    let distances = squared_distances(features);
    let conditionals = calibrated_conditionals(&distances, params.perplexity)?;
    let p = symmetrize(&conditionals);

    // Small Gaussian init via Box-Muller.
    let mut rng = seeded_rng(params.seed);
    let mut gauss = || -> f64 {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [gauss() * 1e-2, gauss() * 1e-2]).collect();
    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];

    for iter in 0..params.iterations {
        let exaggeration = if iter < params.exaggeration_iters {
            params.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < params.exaggeration_iters { 0.5 } else { 0.8 };

        // Student-t weights and normalizer.
        let mut w = vec![vec![0.0f64; n]; n];
        let mut z = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let wij = 1.0 / (1.0 + dx * dx + dy * dy);
                w[i][j] = wij;
                w[j][i] = wij;
                z += 2.0 * wij;
            }
        }

        for i in 0..n {
            let mut grad = [0.0f64; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (w[i][j] / z).max(1e-12);
                let coeff = 4.0 * (exaggeration * p[i][j] - q) * w[i][j];
                grad[0] += coeff * (y[i][0] - y[j][0]);
                grad[1] += coeff * (y[i][1] - y[j][1]);
            }
            for d in 0..2 {
                // Adaptive per-coordinate gains: grow when the gradient
                // keeps direction with the velocity, shrink otherwise.
                gains[i][d] = if grad[d].signum() != velocity[i][d].signum() {
                    (gains[i][d] + 0.2).min(10.0)
                } else {
                    (gains[i][d] * 0.8).max(0.01)
                };
                velocity[i][d] =
                    momentum * velocity[i][d] - params.learning_rate * gains[i][d] * grad[d];
            }
        }
        let mut mean = [0.0f64; 2];
        for i in 0..n {
            y[i][0] += velocity[i][0];
            y[i][1] += velocity[i][1];
            mean[0] += y[i][0];
            mean[1] += y[i][1];
        }
        // Keep the embedding centered so it cannot drift.
        for point in y.iter_mut() {
            point[0] -= mean[0] / n as f64;
            point[1] -= mean[1] / n as f64;
        }
    }

    let kl = kl_divergence(&p, &y);
    if !kl.is_finite() {
        return Err(Error::Numeric("t-SNE objective diverged".into()));
    }
    Ok(Embedding2D {
        points: y,
        labels: Vec::new(),
        kl_divergence: kl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream_rng;

    fn two_clusters(per_cluster: usize, gap: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = substream_rng(seed, 0, 0);
        let mut out = Vec::new();
        for cluster in 0..2 {
            let offset = cluster as f64 * gap;
            for _ in 0..per_cluster {
                out.push((0..10).map(|_| offset + rng.gen_range(-0.5..0.5)).collect());
            }
        }
        out
    }

    #[test]
    fn calibration_hits_target_perplexity() {
        let features = two_clusters(15, 3.0, 1);
        let distances = squared_distances(&features);
        let target = 8.0;
        let rows = calibrated_conditionals(&distances, target).unwrap();
        for (i, row) in rows.iter().enumerate() {
            // Perplexity = exp(Shannon entropy) of the conditional row.
            let entropy: f64 = row
                .iter()
                .enumerate()
                .filter(|&(j, &p)| j != i && p > 0.0)
                .map(|(_, &p)| -p * p.ln())
                .sum();
            assert!(
                (entropy.exp() - target).abs() < PERPLEXITY_TOLERANCE,
                "row {i}: perplexity {}",
                entropy.exp()
            );
        }
    }

    #[test]
    fn symmetrized_joint_sums_to_one() {
        let features = two_clusters(12, 5.0, 2);
        let distances = squared_distances(&features);
        let rows = calibrated_conditionals(&distances, 5.0).unwrap();
        let p = symmetrize(&rows);
        let total: f64 = p
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().filter(move |&(j, _)| j != i))
            .map(|(_, &v)| v)
            .sum();
        assert!((total - 1.0).abs() < 1e-9, "{total}");
    }

    #[test]
    fn separated_clusters_stay_separated() {
        let features = two_clusters(10, 50.0, 3);
        let params = TsneParams {
            perplexity: 5.0,
            iterations: 500,
            exaggeration_iters: 100,
            seed: 7,
            ..Default::default()
        };
        let embedding = tsne_embed(&features, &params).unwrap();
        let centroid = |range: std::ops::Range<usize>| -> [f64; 2] {
            let mut c = [0.0f64; 2];
            for i in range.clone() {
                c[0] += embedding.points[i][0];
                c[1] += embedding.points[i][1];
            }
            [c[0] / range.len() as f64, c[1] / range.len() as f64]
        };
        let ca = centroid(0..10);
        let cb = centroid(10..20);
        let inter = ((ca[0] - cb[0]).powi(2) + (ca[1] - cb[1]).powi(2)).sqrt();
        let mut intra = 0.0;
        for (i, point) in embedding.points.iter().enumerate() {
            let c = if i < 10 { ca } else { cb };
            intra += ((point[0] - c[0]).powi(2) + (point[1] - c[1]).powi(2)).sqrt();
        }
        intra /= embedding.points.len() as f64;
        assert!(
            inter > 5.0 * intra,
            "inter-centroid {inter} vs mean intra {intra}"
        );
    }

    #[test]
    fn identical_points_with_tiny_perplexity_rejected() {
        let features = vec![vec![1.0, 2.0]; 4];
        let params = TsneParams {
            perplexity: 1.0,
            iterations: 10,
            ..Default::default()
        };
        assert!(tsne_embed(&features, &params).is_err());
    }

    #[test]
    fn too_few_points_rejected() {
        let features = two_clusters(5, 1.0, 4);
        let params = TsneParams {
            perplexity: 30.0,
            ..Default::default()
        };
        assert!(tsne_embed(&features, &params).is_err());
    }

    #[test]
    fn descent_reduces_kl_after_exaggeration() {
        let features = two_clusters(12, 10.0, 5);
        let short = TsneParams {
            perplexity: 5.0,
            iterations: 260,
            exaggeration_iters: 250,
            seed: 1,
            ..Default::default()
        };
        let long = TsneParams {
            iterations: 800,
            ..short.clone()
        };
        let early = tsne_embed(&features, &short).unwrap();
        let late = tsne_embed(&features, &long).unwrap();
        assert!(
            late.kl_divergence < early.kl_divergence,
            "{} vs {}",
            late.kl_divergence,
            early.kl_divergence
        );
    }

    #[test]
    fn embedding_is_seed_deterministic() {
        let features = two_clusters(8, 5.0, 6);
        let params = TsneParams {
            perplexity: 4.0,
            iterations: 100,
            exaggeration_iters: 50,
            seed: 3,
            ..Default::default()
        };
        let a = tsne_embed(&features, &params).unwrap();
        let b = tsne_embed(&features, &params).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(a.kl_divergence, b.kl_divergence);
    }
}
