//! K-nearest-neighbour classifier with exact tie rules.

use crate::error::{Error, Result};
use crate::stage::{AttackStage, NUM_STAGES};

/// Stored training set; KNN has no fitting beyond retention.
#[derive(Debug, Clone)]
pub struct KnnModel {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<AttackStage>,
}

pub fn knn_fit(features: Vec<Vec<f64>>, labels: Vec<AttackStage>) -> Result<KnnModel> {
    if features.is_empty() {
        return Err(Error::Data("KNN requires a non-empty training set".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} feature vectors but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::Data("inconsistent feature dimensionality".into()));
    }
    Ok(KnnModel { features, labels })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Majority vote among the `k` Euclidean nearest neighbours. Distance ties
/// break by training index, vote ties by lowest class ordinal.
pub fn knn_predict(model: &KnnModel, query: &[f64], k: usize) -> Result<AttackStage> {
    if k == 0 || k > model.features.len() {
        return Err(Error::Config(format!(
            "k must lie in 1..={}, got {k}",
            model.features.len()
        )));
    }
    if query.len() != model.features[0].len() {
        return Err(Error::Data(format!(
            "query has dimension {}, training data {}",
            query.len(),
            model.features[0].len()
        )));
    }
    let mut order: Vec<(f64, usize)> = model
        .features
        .iter()
        .enumerate()
        .map(|(i, f)| (squared_distance(query, f), i))
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut votes = [0usize; NUM_STAGES];
    for &(_, i) in order.iter().take(k) {
        votes[model.labels[i].ordinal()] += 1;
    }
    let mut best = 0usize;
    for i in 1..NUM_STAGES {
        if votes[i] > votes[best] {
            best = i;
        }
    }
    Ok(AttackStage::from_ordinal(best).unwrap())
}
