//! The RetinaNet-derived classifier: ResNet backbone, feature pyramid
//! network, shared four-conv classification subnetwork, focal loss,
//! logit aggregation, and checkpoint I/O.
//!
//! The box-regression head of the original detector is absent by design;
//! the network only scores the four attack stages.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod model;
pub mod params;

pub use checkpoint::{export_checkpoint, import_checkpoint, read_checkpoint, LoadReport};
pub use loss::{focal_loss, focal_loss_with_grad, FocalLossParams};
pub use model::{build_network, BackboneScale, ForwardPass, Network, NetworkConfig};
pub use params::{Gradients, Param, ParameterStore};

use crate::error::{Error, Result};
use crate::stage::AttackStage;
use ndarray::{Array2, Array4};

/// Pre-softmax scores for the four attack stages, ordered by ordinal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub logits: [f64; 4],
}

impl ClassScores {
    pub fn new(logits: [f64; 4]) -> Result<Self> {
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite class scores".into()));
        }
        Ok(ClassScores { logits })
    }
}

/// Global-average-pool each level's 4-channel map, then take the unweighted
/// mean across levels. Returns one row of logits per batch element.
pub fn aggregate_logits(per_level: &[Array4<f64>]) -> Result<Array2<f64>> {
    if per_level.is_empty() {
        return Err(Error::Config("aggregate_logits needs at least one level".into()));
    }
    let (n, c, _, _) = per_level[0].dim();
    let mut out = Array2::zeros((n, c));
    for map in per_level {
        let (mn, mc, _, _) = map.dim();
        if mn != n || mc != c {
            return Err(Error::Config("mismatched level map shapes".into()));
        }
        let pooled = layers::gap_forward(map);
        for ni in 0..n {
            for ci in 0..c {
                out[[ni, ci]] += pooled[[ni, ci, 0, 0]];
            }
        }
    }
    out.mapv_inplace(|v| v / per_level.len() as f64);
    Ok(out)
}

/// Argmax over the four logits; ties break to the lowest ordinal.
pub fn predict(scores: &ClassScores) -> AttackStage {
    let mut best = 0usize;
    for i in 1..4 {
        if scores.logits[i] > scores.logits[best] {
            best = i;
        }
    }
    AttackStage::from_ordinal(best).unwrap()
}

/// Row-wise prediction for a batch of logits.
pub fn predict_batch(logits: &Array2<f64>) -> Vec<AttackStage> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            for i in 1..row.len() {
                if row[i] > row[best] {
                    best = i;
                }
            }
            AttackStage::from_ordinal(best).unwrap()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream_rng;
    use rand::Rng;

    #[test]
    fn predict_argmax_and_tie_rule() {
        let s = ClassScores::new([0.1, 2.0, -1.0, 0.0]).unwrap();
        assert_eq!(predict(&s), AttackStage::Yellow);
        let tie = ClassScores::new([0.5, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(predict(&tie), AttackStage::Green);
        assert!(ClassScores::new([f64::NAN, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn softmax_then_argmax_equals_logit_argmax() {
        let mut rng = substream_rng(1, 0, 0);
        for _ in 0..1000 {
            let logits: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-5.0..5.0));
            let exps: Vec<f64> = logits.iter().map(|v| v.exp()).collect();
            let total: f64 = exps.iter().sum();
            let probs: Vec<f64> = exps.iter().map(|e| e / total).collect();
            let argmax_p = (0..4).max_by(|&a, &b| probs[a].partial_cmp(&probs[b]).unwrap()).unwrap();
            let scores = ClassScores::new(logits).unwrap();
            assert_eq!(predict(&scores).ordinal(), argmax_p);
        }
    }

    #[test]
    fn aggregate_single_pixel_identity() {
        let map = Array4::from_shape_fn((1, 4, 1, 1), |(_, c, _, _)| c as f64 + 0.5);
        let out = aggregate_logits(&[map]).unwrap();
        for c in 0..4 {
            assert!((out[[0, c]] - (c as f64 + 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_two_constant_levels_is_mean() {
        let v = Array4::from_elem((2, 4, 3, 3), 1.0);
        let w = Array4::from_elem((2, 4, 5, 5), 3.0);
        let out = aggregate_logits(&[v, w]).unwrap();
        for row in out.rows() {
            for x in row {
                assert!((x - 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn aggregate_matches_bruteforce_average() {
        let mut rng = substream_rng(2, 0, 0);
        let maps: Vec<Array4<f64>> = vec![
            Array4::from_shape_fn((2, 4, 3, 5), |_| rng.gen_range(-1.0..1.0)),
            Array4::from_shape_fn((2, 4, 2, 2), |_| rng.gen_range(-1.0..1.0)),
            Array4::from_shape_fn((2, 4, 1, 1), |_| rng.gen_range(-1.0..1.0)),
        ];
        let out = aggregate_logits(&maps).unwrap();
        for ni in 0..2 {
            for ci in 0..4 {
                let mut acc = 0.0;
                for m in &maps {
                    let (_, _, h, w) = m.dim();
                    let mut s = 0.0;
                    for y in 0..h {
                        for x in 0..w {
                            s += m[[ni, ci, y, x]];
                        }
                    }
                    acc += s / (h * w) as f64;
                }
                acc /= maps.len() as f64;
                assert!((out[[ni, ci]] - acc).abs() < 1e-6);
            }
        }
    }
}
