//! Metrics and analysis artifacts: confusion matrices, accuracy reports,
//! color statistics, t-SNE embeddings, and the synthetic desk-scale fixture.

pub mod fixture;
pub mod render;
pub mod tsne;

pub use fixture::{make_synthetic_fixture, write_fixture_dataset, FixtureSpec};
pub use tsne::{
    calibrated_conditionals, tsne_embed, Embedding2D, TsneParams, PERPLEXITY_TOLERANCE,
};

use crate::data::CrownPatch;
use crate::error::{Error, Result};
use crate::stage::{AttackStage, FlightSpec, NUM_STAGES};
use serde::Serialize;

/// 4x4 count matrix; rows are true classes, columns predictions, both in
/// attack-stage ordinal order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_STAGES]; NUM_STAGES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_STAGES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> [u64; NUM_STAGES] {
        std::array::from_fn(|i| self.counts[i].iter().sum())
    }
}

/// Tally prediction/truth pairs.
pub fn confusion_matrix(
    predictions: &[AttackStage],
    truths: &[AttackStage],
) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() {
        return Err(Error::Data(format!(
            "{} predictions but {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mut counts = [[0u64; NUM_STAGES]; NUM_STAGES];
    for (p, t) in predictions.iter().zip(truths) {
        counts[t.ordinal()][p.ordinal()] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Fraction of the matrix on the diagonal.
pub fn accuracy(matrix: &ConfusionMatrix) -> Result<f64> {
    let total = matrix.total();
    if total == 0 {
        return Err(Error::Data("empty confusion matrix".into()));
    }
    Ok(matrix.trace() as f64 / total as f64)
}

/// Per-flight and averaged accuracy. Macro averages the per-flight
/// fractions with equal weight; micro pools all counts first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub per_flight: Vec<(FlightSpec, f64)>,
    pub macro_average: f64,
    pub micro_average: f64,
}

pub fn average_accuracy(matrices: &[(FlightSpec, ConfusionMatrix)]) -> Result<AccuracyReport> {
    if matrices.is_empty() {
        return Err(Error::Data("no confusion matrices to average".into()));
    }
    let mut per_flight = Vec::with_capacity(matrices.len());
    let mut macro_acc = 0.0;
    let mut pooled_trace = 0u64;
    let mut pooled_total = 0u64;
    for (flight, matrix) in matrices {
        let acc = accuracy(matrix)?;
        per_flight.push((*flight, acc));
        macro_acc += acc;
        pooled_trace += matrix.trace();
        pooled_total += matrix.total();
    }
    Ok(AccuracyReport {
        per_flight,
        macro_average: macro_acc / matrices.len() as f64,
        micro_average: pooled_trace as f64 / pooled_total as f64,
    })
}

/// 256-bin pixel-value histograms per class and channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ColorHistogram {
    pub stage: AttackStage,
    /// `bins[channel][value]`.
    pub bins: Vec<Vec<u64>>,
}

/// Exact per-class, per-channel counts over all pixels.
pub fn rgb_histograms(patches: &[CrownPatch]) -> Result<Vec<ColorHistogram>> {
    if patches.is_empty() {
        return Err(Error::Data("no patches to histogram".into()));
    }
    let mut bins = vec![vec![vec![0u64; 256]; 3]; NUM_STAGES];
    let mut seen = [false; NUM_STAGES];
    for patch in patches {
        let ord = patch.stage.ordinal();
        seen[ord] = true;
        for &v in patch.pixels.slice(ndarray::s![.., .., 0]).iter() {
            bins[ord][0][v as usize] += 1;
        }
        for &v in patch.pixels.slice(ndarray::s![.., .., 1]).iter() {
            bins[ord][1][v as usize] += 1;
        }
        for &v in patch.pixels.slice(ndarray::s![.., .., 2]).iter() {
            bins[ord][2][v as usize] += 1;
        }
    }
    Ok(AttackStage::ALL
        .iter()
        .filter(|s| seen[s.ordinal()])
        .map(|s| ColorHistogram {
            stage: *s,
            bins: bins[s.ordinal()].clone(),
        })
        .collect())
}

/// Per-patch mean RGB, paired with the label.
pub fn mean_color_scatter(patches: &[CrownPatch]) -> Vec<([f64; 3], AttackStage)> {
    patches
        .iter()
        .map(|p| {
            let n = (p.side() * p.side()) as f64;
            let mut mean = [0.0f64; 3];
            for y in 0..p.side() {
                for x in 0..p.side() {
                    for c in 0..3 {
                        mean[c] += p.pixels[[y, x, c]] as f64;
                    }
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            (mean, p.stage)
        })
        .collect()
}

/// Mean silhouette coefficient over all points with Euclidean distances.
/// Requires at least two clusters and every cluster non-trivial.
pub fn silhouette_score(points: &[Vec<f64>], labels: &[AttackStage]) -> Result<f64> {
    if points.len() != labels.len() || points.len() < 2 {
        return Err(Error::Data("silhouette needs >= 2 labelled points".into()));
    }
    let mut counts = [0usize; NUM_STAGES];
    labels.iter().for_each(|l| counts[l.ordinal()] += 1);
    let clusters = counts.iter().filter(|&&c| c > 0).count();
    if clusters < 2 {
        return Err(Error::Data("silhouette needs at least two clusters".into()));
    }
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let own = labels[i].ordinal();
        if counts[own] == 1 {
            // Singleton clusters contribute zero by convention.
            continue;
        }
        let mut sums = [0.0f64; NUM_STAGES];
        for j in 0..n {
            if j != i {
                sums[labels[j].ordinal()] += dist(&points[i], &points[j]);
            }
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..NUM_STAGES)
            .filter(|&k| k != own && counts[k] > 0)
            .map(|k| sums[k] / counts[k] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}
