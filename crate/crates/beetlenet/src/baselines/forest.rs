//! Random forest: bootstrap-sampled CART trees with Gini splits on random
//! feature subsets.

use crate::error::{Error, Result};
use crate::rng::substream_rng;
use crate::stage::{AttackStage, NUM_STAGES};
use rand::seq::SliceRandom;
use rand::Rng;

/// Gini impurity of a class-count vector: `1 - sum(p_k^2)`.
pub fn gini_impurity(counts: &[usize; NUM_STAGES]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let mut acc = 1.0;
    for &c in counts {
        let p = c as f64 / total as f64;
        acc -= p * p;
    }
    acc
}

/// Impurity decrease of splitting `parent` into `left` + `right`, weighted
/// by branch sizes.
pub fn gini_gain(
    parent: &[usize; NUM_STAGES],
    left: &[usize; NUM_STAGES],
    right: &[usize; NUM_STAGES],
) -> f64 {
    let n: usize = parent.iter().sum();
    let nl: usize = left.iter().sum();
    let nr: usize = right.iter().sum();
    debug_assert_eq!(n, nl + nr);
    gini_impurity(parent)
        - (nl as f64 / n as f64) * gini_impurity(left)
        - (nr as f64 / n as f64) * gini_impurity(right)
}

#[derive(Debug, Clone, PartialEq)]
enum TreeNode {
    Leaf {
        label: AttackStage,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// One CART tree stored as a flat node arena rooted at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn predict(&self, x: &[f64]) -> AttackStage {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { label } => return *label,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Debug, Clone)]
pub struct RandomForestModel {
    pub trees: Vec<DecisionTree>,
}

fn class_counts(labels: &[AttackStage], indices: &[usize]) -> [usize; NUM_STAGES] {
    let mut counts = [0usize; NUM_STAGES];
    for &i in indices {
        counts[labels[i].ordinal()] += 1;
    }
    counts
}

fn majority(counts: &[usize; NUM_STAGES]) -> AttackStage {
    let mut best = 0usize;
    for i in 1..NUM_STAGES {
        if counts[i] > counts[best] {
            best = i;
        }
    }
    AttackStage::from_ordinal(best).unwrap()
}

struct TreeBuilder<'a> {
    features: &'a [Vec<f64>],
    labels: &'a [AttackStage],
    features_per_split: usize,
    max_depth: Option<usize>,
    nodes: Vec<TreeNode>,
}

impl<'a> TreeBuilder<'a> {
    fn grow(&mut self, indices: &[usize], depth: usize, rng: &mut impl Rng) -> usize {
        let counts = class_counts(self.labels, indices);
        let impurity = gini_impurity(&counts);
        let depth_capped = self.max_depth.map(|d| depth >= d).unwrap_or(false);
        if impurity <= 1e-12 || depth_capped || indices.len() < 2 {
            let id = self.nodes.len();
            self.nodes.push(TreeNode::Leaf {
                label: majority(&counts),
            });
            return id;
        }

        let dim = self.features[0].len();
        let mut candidates: Vec<usize> = (0..dim).collect();
        candidates.shuffle(rng);
        candidates.truncate(self.features_per_split.min(dim));
        candidates.sort_unstable(); // deterministic evaluation order

        let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
        for &feature in &candidates {
            let mut values: Vec<f64> = indices.iter().map(|&i| self.features[i][feature]).collect();
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            values.dedup();
            for pair in values.windows(2) {
                let threshold = (pair[0] + pair[1]) / 2.0;
                let mut left = [0usize; NUM_STAGES];
                let mut right = [0usize; NUM_STAGES];
                for &i in indices {
                    if self.features[i][feature] <= threshold {
                        left[self.labels[i].ordinal()] += 1;
                    } else {
                        right[self.labels[i].ordinal()] += 1;
                    }
                }
                let gain = gini_gain(&counts, &left, &right);
                let better = match best {
                    None => gain > 1e-12,
                    Some((g, _, _)) => gain > g + 1e-12,
                };
                if better {
                    best = Some((gain, feature, threshold));
                }
            }
        }

        let (_, feature, threshold) = match best {
            Some(b) => b,
            None => {
                let id = self.nodes.len();
                self.nodes.push(TreeNode::Leaf {
                    label: majority(&counts),
                });
                return id;
            }
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
            .iter()
            .partition(|&&i| self.features[i][feature] <= threshold);
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            label: AttackStage::Green, // placeholder, replaced below
        });
        let left = self.grow(&left_idx, depth + 1, rng);
        let right = self.grow(&right_idx, depth + 1, rng);
        self.nodes[id] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Fit `n_trees` bootstrap trees. Fully deterministic per seed: tree `t`
/// draws its bootstrap sample and split-feature subsets from substream `t`.
pub fn rf_fit(
    features: &[Vec<f64>],
    labels: &[AttackStage],
    n_trees: usize,
    max_depth: Option<usize>,
    features_per_split: usize,
    seed: u64,
) -> Result<RandomForestModel> {
    if n_trees == 0 {
        return Err(Error::Config("n_trees must be at least 1".into()));
    }
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Data("forest needs matching non-empty features and labels".into()));
    }
    if features_per_split == 0 {
        return Err(Error::Config("features_per_split must be at least 1".into()));
    }
    let n = features.len();
    let trees = (0..n_trees)
        .map(|t| {
            let mut rng = substream_rng(seed, t as u64, 0);
            let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut builder = TreeBuilder {
                features,
                labels,
                features_per_split,
                max_depth,
                nodes: Vec::new(),
            };
            builder.grow(&sample, 0, &mut rng);
            DecisionTree {
                nodes: builder.nodes,
            }
        })
        .collect();
    Ok(RandomForestModel { trees })
}

/// Vote tallies per class; sums to the tree count.
pub fn rf_votes(model: &RandomForestModel, x: &[f64]) -> [usize; NUM_STAGES] {
    let mut votes = [0usize; NUM_STAGES];
    for tree in &model.trees {
        votes[tree.predict(x).ordinal()] += 1;
    }
    votes
}

/// Majority vote across trees; ties break to the lowest ordinal.
pub fn rf_predict(model: &RandomForestModel, x: &[f64]) -> AttackStage {
    majority(&rf_votes(model, x))
}
