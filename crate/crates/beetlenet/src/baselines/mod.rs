//! Classical baselines on raw pixel features: KNN, SVM, and random forest,
//! tuned by exhaustive grid search on validation accuracy.

pub mod forest;
pub mod knn;
pub mod svm;

pub use forest::{gini_gain, gini_impurity, rf_fit, rf_predict, rf_votes, RandomForestModel};
pub use knn::{knn_fit, knn_predict, KnnModel};
pub use svm::{kkt_residual, svm_fit, svm_predict, Kernel, SvmModel, KKT_TOLERANCE};

use crate::data::{resize_patch, CrownPatch};
use crate::error::{Error, Result};
use crate::stage::AttackStage;
use serde::{Deserialize, Serialize};

/// Flat per-patch feature vector: bilinear resize to `side`, row-major
/// flatten per channel with channels concatenated, scaled to [0,1].
pub fn featurize(patch: &CrownPatch, side: usize) -> Result<Vec<f64>> {
    if side < 2 {
        return Err(Error::Config(format!("feature side must be >= 2, got {side}")));
    }
    let resized = resize_patch(patch, side);
    let mut out = Vec::with_capacity(3 * side * side);
    for c in 0..3 {
        for y in 0..side {
            for x in 0..side {
                out.push(resized.pixels[[y, x, c]] as f64 / 255.0);
            }
        }
    }
    Ok(out)
}

/// Default feature side used throughout the pipeline (vector length 3072).
pub const FEATURE_SIDE: usize = 32;

/// Candidate lists for each classifier family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperGrid {
    pub knn_k: Vec<usize>,
    pub svm_c: Vec<f64>,
    pub svm_kernels: Vec<Kernel>,
    pub rf_trees: Vec<usize>,
    /// `None` means unlimited depth; serialized as 0 since TOML has no null.
    #[serde(with = "depth_codec")]
    pub rf_depths: Vec<Option<usize>>,
}

/// (De)serialize `Vec<Option<usize>>` as plain integers with 0 = unlimited.
mod depth_codec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Option<usize>], s: S) -> Result<S::Ok, S::Error> {
        let raw: Vec<usize> = v.iter().map(|d| d.unwrap_or(0)).collect();
        raw.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Option<usize>>, D::Error> {
        let raw = Vec::<usize>::deserialize(d)?;
        Ok(raw.into_iter().map(|d| if d == 0 { None } else { Some(d) }).collect())
    }
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            knn_k: vec![1, 3, 5, 7, 9],
            svm_c: vec![0.1, 1.0, 10.0, 100.0],
            svm_kernels: vec![
                Kernel::Linear,
                Kernel::Rbf { gamma: 0.001 },
                Kernel::Rbf { gamma: 0.01 },
                Kernel::Rbf { gamma: 0.1 },
            ],
            rf_trees: vec![50, 100, 200],
            rf_depths: vec![Some(8), Some(16), None],
        }
    }
}

impl HyperGrid {
    pub fn validate(&self, kind: BaselineKind) -> Result<()> {
        let empty = match kind {
            BaselineKind::Knn => self.knn_k.is_empty(),
            BaselineKind::Svm => self.svm_c.is_empty() || self.svm_kernels.is_empty(),
            BaselineKind::RandomForest => self.rf_trees.is_empty() || self.rf_depths.is_empty(),
        };
        if empty {
            return Err(Error::Config(format!("empty hyperparameter grid for {kind:?}")));
        }
        Ok(())
    }
}

/// Which classical model a grid search tunes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Knn,
    Svm,
    RandomForest,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Knn => "knn",
            BaselineKind::Svm => "svm",
            BaselineKind::RandomForest => "rf",
        }
    }
}

/// One grid point, in enumeration order.
#[derive(Debug, Clone, PartialEq)]
pub enum GridPoint {
    Knn { k: usize },
    Svm { c: f64, kernel: Kernel },
    Rf { trees: usize, depth: Option<usize> },
}

impl GridPoint {
    /// Compact `key=value` form used in result tables.
    pub fn describe(&self) -> String {
        match self {
            GridPoint::Knn { k } => format!("k={k}"),
            GridPoint::Svm { c, kernel } => match kernel {
                Kernel::Linear => format!("C={c};kernel=linear"),
                Kernel::Rbf { gamma } => format!("C={c};kernel=rbf;gamma={gamma}"),
            },
            GridPoint::Rf { trees, depth } => match depth {
                Some(d) => format!("trees={trees};depth={d}"),
                None => format!("trees={trees};depth=unlimited"),
            },
        }
    }
}

/// Expand a grid into ordered points for one classifier family.
pub fn enumerate_grid(kind: BaselineKind, grid: &HyperGrid) -> Vec<GridPoint> {
    match kind {
        BaselineKind::Knn => grid.knn_k.iter().map(|&k| GridPoint::Knn { k }).collect(),
        BaselineKind::Svm => {
            let mut out = Vec::new();
            for &c in &grid.svm_c {
                for kernel in &grid.svm_kernels {
                    out.push(GridPoint::Svm { c, kernel: *kernel });
                }
            }
            out
        }
        BaselineKind::RandomForest => {
            let mut out = Vec::new();
            for &trees in &grid.rf_trees {
                for &depth in &grid.rf_depths {
                    out.push(GridPoint::Rf { trees, depth });
                }
            }
            out
        }
    }
}

/// A fitted classical model ready for prediction.
pub enum TrainedBaseline {
    Knn { model: KnnModel, k: usize },
    Svm(SvmModel),
    Rf(RandomForestModel),
}

impl TrainedBaseline {
    pub fn predict(&self, x: &[f64]) -> Result<AttackStage> {
        match self {
            TrainedBaseline::Knn { model, k } => knn_predict(model, x, *k),
            TrainedBaseline::Svm(model) => svm_predict(model, x),
            TrainedBaseline::Rf(model) => Ok(rf_predict(model, x)),
        }
    }

    pub fn accuracy(&self, xs: &[Vec<f64>], ys: &[AttackStage]) -> Result<f64> {
        if xs.is_empty() {
            return Err(Error::Data("empty evaluation set".into()));
        }
        let mut correct = 0usize;
        for (x, y) in xs.iter().zip(ys) {
            if self.predict(x)? == *y {
                correct += 1;
            }
        }
        Ok(correct as f64 / xs.len() as f64)
    }
}

/// Fit one grid point on the training set.
pub fn fit_point(
    point: &GridPoint,
    train_x: &[Vec<f64>],
    train_y: &[AttackStage],
    seed: u64,
) -> Result<TrainedBaseline> {
    match point {
        GridPoint::Knn { k } => {
            let model = knn_fit(train_x.to_vec(), train_y.to_vec())?;
            if *k > train_x.len() {
                return Err(Error::Config(format!(
                    "k = {k} exceeds training size {}",
                    train_x.len()
                )));
            }
            Ok(TrainedBaseline::Knn { model, k: *k })
        }
        GridPoint::Svm { c, kernel } => {
            Ok(TrainedBaseline::Svm(svm_fit(train_x, train_y, *c, *kernel)?))
        }
        GridPoint::Rf { trees, depth } => {
            let dim = train_x.first().map(|v| v.len()).unwrap_or(0);
            let feats = ((dim as f64).sqrt().round() as usize).max(1);
            Ok(TrainedBaseline::Rf(rf_fit(
                train_x, train_y, *trees, *depth, feats, seed,
            )?))
        }
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub params: String,
    pub val_accuracy: f64,
}

/// Full grid-search output: the table in enumeration order plus the winner.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSearchOutcome {
    pub kind: BaselineKind,
    pub table: Vec<GridRow>,
    pub best_index: usize,
    pub best_params: String,
    pub best_val_accuracy: f64,
}

/// Evaluate every grid point by validation accuracy; ties break to the
/// earliest enumeration order.
pub fn grid_search(
    kind: BaselineKind,
    grid: &HyperGrid,
    train_x: &[Vec<f64>],
    train_y: &[AttackStage],
    val_x: &[Vec<f64>],
    val_y: &[AttackStage],
    seed: u64,
) -> Result<GridSearchOutcome> {
    grid.validate(kind)?;
    if train_x.is_empty() || val_x.is_empty() {
        return Err(Error::Data("grid search needs non-empty train and val sets".into()));
    }
    let points = enumerate_grid(kind, grid);
    let mut table = Vec::with_capacity(points.len());
    let mut best_index = 0usize;
    for (i, point) in points.iter().enumerate() {
        let model = fit_point(point, train_x, train_y, seed)?;
        let acc = model.accuracy(val_x, val_y)?;
        table.push(GridRow {
            params: point.describe(),
            val_accuracy: acc,
        });
        if acc > table[best_index].val_accuracy {
            best_index = i;
        }
    }
    Ok(GridSearchOutcome {
        kind,
        best_params: table[best_index].params.clone(),
        best_val_accuracy: table[best_index].val_accuracy,
        best_index,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stage::FlightSpec;
    use ndarray::Array3;
    use rand::Rng;

    fn constant_patch(value: u8, side: usize) -> CrownPatch {
        CrownPatch::new(
            Array3::from_elem((side, side, 3), value),
            AttackStage::Green,
            FlightSpec::Jun60,
            "t",
        )
        .unwrap()
    }

    #[test]
    fn featurize_constant_255_is_all_ones() {
        let v = featurize(&constant_patch(255, 48), 32).unwrap();
        assert_eq!(v.len(), 3 * 32 * 32);
        assert!(v.iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn featurize_side_32_has_length_3072() {
        let v = featurize(&constant_patch(7, 16), 32).unwrap();
        assert_eq!(v.len(), 3072);
        assert!(featurize(&constant_patch(7, 16), 1).is_err());
    }

    #[test]
    fn featurize_matches_resize_then_flatten_oracle() {
        // Gradient patch; independent resize + flatten via imageops.
        let side = 20;
        let pixels = Array3::from_shape_fn((side, side, 3), |(y, x, c)| {
            ((y * 13 + x * 7 + c * 31) % 256) as u8
        });
        let patch =
            CrownPatch::new(pixels, AttackStage::Red, FlightSpec::Aug90, "g").unwrap();
        let got = featurize(&patch, 8).unwrap();
        let resized = resize_patch(&patch, 8);
        let mut expected = Vec::new();
        for c in 0..3 {
            for y in 0..8 {
                for x in 0..8 {
                    expected.push(resized.pixels[[y, x, c]] as f64 / 255.0);
                }
            }
        }
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    /// Four tight clusters in 3-D, one per class.
    pub(crate) fn cluster_data(per_class: usize, spread: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<AttackStage>) {
        let centers = [
            [0.0, 0.0, 0.0],
            [4.0, 0.0, 0.0],
            [0.0, 4.0, 0.0],
            [0.0, 0.0, 4.0],
        ];
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (ord, center) in centers.iter().enumerate() {
            let mut rng = crate::rng::substream_rng(seed, ord as u64, 0);
            for _ in 0..per_class {
                xs.push(center.iter().map(|&c| c + rng.gen_range(-spread..spread)).collect());
                ys.push(AttackStage::from_ordinal(ord).unwrap());
            }
        }
        (xs, ys)
    }

    #[test]
    fn grid_enumeration_counts_are_products() {
        let grid = HyperGrid::default();
        assert_eq!(enumerate_grid(BaselineKind::Knn, &grid).len(), 5);
        assert_eq!(enumerate_grid(BaselineKind::Svm, &grid).len(), 16);
        assert_eq!(enumerate_grid(BaselineKind::RandomForest, &grid).len(), 9);
    }

    #[test]
    fn single_point_grid_is_selected() {
        let (xs, ys) = cluster_data(10, 0.5, 1);
        let grid = HyperGrid {
            knn_k: vec![3],
            ..Default::default()
        };
        let out = grid_search(BaselineKind::Knn, &grid, &xs, &ys, &xs, &ys, 0).unwrap();
        assert_eq!(out.table.len(), 1);
        assert_eq!(out.best_params, "k=3");
    }

    #[test]
    fn grid_search_finds_known_best_k() {
        // With one mislabeled training point, k = 1 memorizes the error on
        // the identical validation query while k = 3 outvotes it.
        let xs = vec![
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![0.0, 0.1],
            vec![5.0, 5.0],
            vec![5.1, 5.0],
            vec![5.0, 5.1],
        ];
        let mut ys = vec![
            AttackStage::Green,
            AttackStage::Green,
            AttackStage::Green,
            AttackStage::Red,
            AttackStage::Red,
            AttackStage::Red,
        ];
        ys[0] = AttackStage::Yellow; // label noise at the query point
        let val_x = vec![vec![0.0, 0.0], vec![5.0, 5.0]];
        let val_y = vec![AttackStage::Green, AttackStage::Red];
        let grid = HyperGrid {
            knn_k: vec![1, 3],
            ..Default::default()
        };
        let out = grid_search(BaselineKind::Knn, &grid, &xs, &ys, &val_x, &val_y, 0).unwrap();
        assert_eq!(out.best_params, "k=3");
        assert!(out.table[1].val_accuracy > out.table[0].val_accuracy);
    }

    #[test]
    fn ties_break_to_earliest_grid_order() {
        let (xs, ys) = cluster_data(8, 0.2, 2);
        let grid = HyperGrid {
            knn_k: vec![1, 3, 5],
            ..Default::default()
        };
        // Clusters are so tight every k gets 100%; k = 1 must win.
        let out = grid_search(BaselineKind::Knn, &grid, &xs, &ys, &xs, &ys, 0).unwrap();
        assert_eq!(out.best_index, 0);
        assert!(out.table.iter().all(|r| (r.val_accuracy - 1.0).abs() < 1e-12));
    }

    #[test]
    fn all_three_separate_clusters_and_fail_on_shuffled_labels() {
        let (xs, ys) = cluster_data(30, 0.4, 3);
        // Held-out set from a different substream.
        let (val_x, val_y) = cluster_data(10, 0.4, 4);
        let grid = HyperGrid {
            knn_k: vec![3],
            svm_c: vec![10.0],
            svm_kernels: vec![Kernel::Linear],
            rf_trees: vec![30],
            rf_depths: vec![None],
        };
        for kind in [BaselineKind::Knn, BaselineKind::Svm, BaselineKind::RandomForest] {
            let out = grid_search(kind, &grid, &xs, &ys, &val_x, &val_y, 5).unwrap();
            assert!(
                out.best_val_accuracy > 0.9,
                "{kind:?} got {}",
                out.best_val_accuracy
            );
        }
        // Shuffled labels: near chance.
        let mut shuffled = ys.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut crate::rng::seeded_rng(11));
        let out = grid_search(BaselineKind::Knn, &grid, &xs, &shuffled, &val_x, &val_y, 5).unwrap();
        assert!(
            (out.best_val_accuracy - 0.25).abs() <= 0.15,
            "chance-level expected, got {}",
            out.best_val_accuracy
        );
    }
}
