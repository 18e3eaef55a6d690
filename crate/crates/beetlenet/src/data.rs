//! Annotation parsing, crown-patch extraction, stratified splits, and
//! training-set normalization.

use crate::error::{Error, Result};
use crate::imageops;
use crate::rng::substream_rng;
use crate::stage::{AttackStage, FlightSpec};
use ndarray::Array3;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// Ground-truth record for one tree: orthomosaic pixel center plus label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeAnnotation {
    pub flight: FlightSpec,
    pub tree_id: String,
    pub center_x: i64,
    pub center_y: i64,
    pub stage: AttackStage,
}

/// Square RGB crop of one tree crown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrownPatch {
    /// side×side×3, 8-bit RGB.
    pub pixels: Array3<u8>,
    pub stage: AttackStage,
    pub flight: FlightSpec,
    pub tree_id: String,
    /// True for augmentation-generated samples.
    pub synthetic: bool,
}

impl CrownPatch {
    pub fn new(
        pixels: Array3<u8>,
        stage: AttackStage,
        flight: FlightSpec,
        tree_id: impl Into<String>,
    ) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if h != w {
            return Err(Error::Data(format!("patch must be square, got {h}x{w}")));
        }
        if c != 3 {
            return Err(Error::Data(format!("patch must have 3 channels, got {c}")));
        }
        Ok(CrownPatch {
            pixels,
            stage,
            flight,
            tree_id: tree_id.into(),
            synthetic: false,
        })
    }

    pub fn side(&self) -> usize {
        self.pixels.dim().0
    }
}

/// Per-flight train/val/test partition.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<CrownPatch>,
    pub val: Vec<CrownPatch>,
    pub test: Vec<CrownPatch>,
    pub seed: u64,
}

/// Per-channel mean/std of the training set, in [0,1] units after /255.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Parse the annotation CSV: header `flight,tree_id,center_x,center_y,stage`,
/// LF line endings, integer pixel coordinates, case-sensitive stage names.
pub fn parse_annotations(csv_text: &str) -> Result<Vec<TreeAnnotation>> {
    const HEADER: &str = "flight,tree_id,center_x,center_y,stage";
    let mut lines = csv_text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == HEADER => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `{HEADER}`, got `{h}`"),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty annotation file".into(),
            })
        }
    }

    let mut out = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 5 columns, got {}", fields.len()),
            });
        }
        let flight: FlightSpec = fields[0].parse().map_err(|e| Error::Parse {
            line: line_no,
            message: format!("{e}"),
        })?;
        let center_x: i64 = fields[2].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("center_x `{}` is not an integer", fields[2]),
        })?;
        let center_y: i64 = fields[3].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("center_y `{}` is not an integer", fields[3]),
        })?;
        let stage: AttackStage = fields[4].parse().map_err(|e| Error::Parse {
            line: line_no,
            message: format!("{e}"),
        })?;
        out.push(TreeAnnotation {
            flight,
            tree_id: fields[1].to_string(),
            center_x,
            center_y,
            stage,
        });
    }
    Ok(out)
}

/// Crop the side×side window centered at the annotation from an H×W×3
/// raster. Pixels outside the raster are zero-filled.
pub fn extract_patch(
    raster: &Array3<u8>,
    annotation: &TreeAnnotation,
    side: usize,
) -> Result<CrownPatch> {
    let (h, w, c) = raster.dim();
    if c != 3 {
        return Err(Error::Data(format!("raster must have 3 channels, got {c}")));
    }
    if side < 2 {
        return Err(Error::Data(format!("patch side must be >= 2, got {side}")));
    }
    let (cx, cy) = (annotation.center_x, annotation.center_y);
    if cx < 0 || cy < 0 || cx as usize >= w || cy as usize >= h {
        return Err(Error::Data(format!(
            "tree `{}`: center ({cx},{cy}) outside {w}x{h} raster",
            annotation.tree_id
        )));
    }
    let half = (side / 2) as i64;
    let y0 = cy - half;
    let x0 = cx - half;
    let mut pixels = Array3::zeros((side, side, 3));
    for dy in 0..side as i64 {
        let sy = y0 + dy;
        if sy < 0 || sy as usize >= h {
            continue;
        }
        for dx in 0..side as i64 {
            let sx = x0 + dx;
            if sx < 0 || sx as usize >= w {
                continue;
            }
            for ch in 0..3 {
                pixels[[dy as usize, dx as usize, ch]] = raster[[sy as usize, sx as usize, ch]];
            }
        }
    }
    CrownPatch::new(pixels, annotation.stage, annotation.flight, annotation.tree_id.clone())
}

/// Largest-remainder apportionment of `total` across weighted buckets with
/// per-bucket caps. Ties in fractional part break toward the lower index.
fn largest_remainder(weights: &[usize], caps: &[usize], total: usize) -> Vec<usize> {
    assert_eq!(weights.len(), caps.len());
    let wsum: usize = weights.iter().sum();
    let mut alloc: Vec<usize> = Vec::with_capacity(weights.len());
    let mut fracs: Vec<(usize, f64)> = Vec::with_capacity(weights.len());
    for (i, (&wgt, &cap)) in weights.iter().zip(caps).enumerate() {
        let quota = if wsum == 0 { 0.0 } else { wgt as f64 * total as f64 / wsum as f64 };
        let base = (quota.floor() as usize).min(cap);
        alloc.push(base);
        fracs.push((i, quota - quota.floor()));
    }
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut assigned: usize = alloc.iter().sum();
    // First pass by largest remainder, then round-robin until caps absorb the rest.
    while assigned < total {
        let before = assigned;
        for &(i, _) in &fracs {
            if assigned == total {
                break;
            }
            if alloc[i] < caps[i] {
                alloc[i] += 1;
                assigned += 1;
            }
        }
        if assigned == before {
            break; // caps exhausted
        }
    }
    alloc
}

/// Deterministic stratified split with largest-remainder per-class allocation.
pub fn stratified_split(
    patches: &[CrownPatch],
    val_count: usize,
    test_count: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    stratified_split_pinned(patches, val_count, test_count, seed, None)
}

/// Stratified split that additionally pins the train count of one class
/// (used to replay the published per-flight splits, where the Green train
/// counts are forced by the augmented-train totals).
pub fn stratified_split_pinned(
    patches: &[CrownPatch],
    val_count: usize,
    test_count: usize,
    seed: u64,
    pin_train: Option<(AttackStage, usize)>,
) -> Result<DatasetSplit> {
    let total = patches.len();
    if val_count + test_count >= total {
        return Err(Error::Data(format!(
            "infeasible split: val {val_count} + test {test_count} >= total {total}"
        )));
    }
    let train_total = total - val_count - test_count;

    // Group indices by class, in input order.
    let mut class_indices: Vec<Vec<usize>> = vec![Vec::new(); AttackStage::ALL.len()];
    for (i, p) in patches.iter().enumerate() {
        class_indices[p.stage.ordinal()].push(i);
    }
    let present: Vec<usize> = (0..class_indices.len())
        .filter(|&c| !class_indices[c].is_empty())
        .collect();
    let counts: Vec<usize> = present.iter().map(|&c| class_indices[c].len()).collect();

    // Per-class train allocation.
    let train_alloc = match pin_train {
        Some((stage, pinned)) => {
            let pos = present
                .iter()
                .position(|&c| c == stage.ordinal())
                .ok_or_else(|| Error::Data(format!("pinned class {stage} has no samples")))?;
            if pinned > counts[pos] || pinned > train_total {
                return Err(Error::Data(format!(
                    "pinned train count {pinned} for {stage} is infeasible"
                )));
            }
            let mut weights = counts.clone();
            let mut caps = counts.clone();
            weights[pos] = 0;
            caps[pos] = 0;
            let mut alloc = largest_remainder(&weights, &caps, train_total - pinned);
            alloc[pos] = pinned;
            alloc
        }
        None => largest_remainder(&counts, &counts, train_total),
    };

    // Split each class's remainder between val and test.
    let remain: Vec<usize> = counts.iter().zip(&train_alloc).map(|(n, t)| n - t).collect();
    let val_alloc = largest_remainder(&remain, &remain, val_count);
    let test_alloc: Vec<usize> = remain.iter().zip(&val_alloc).map(|(r, v)| r - v).collect();
    let test_sum: usize = test_alloc.iter().sum();
    if test_sum != test_count {
        return Err(Error::Data(format!(
            "infeasible split: class caps leave {test_sum} test samples, requested {test_count}"
        )));
    }

    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for (pos, &class) in present.iter().enumerate() {
        let mut idxs = class_indices[class].clone();
        let mut rng = substream_rng(seed, class as u64, 0);
        idxs.shuffle(&mut rng);
        for (rank, &i) in idxs.iter().enumerate() {
            let p = patches[i].clone();
            if rank < train_alloc[pos] {
                split.train.push(p);
            } else if rank < train_alloc[pos] + val_alloc[pos] {
                split.val.push(p);
            } else {
                split.test.push(p);
            }
        }
    }
    Ok(split)
}

/// Per-channel mean and population std over all train pixels, in [0,1].
pub fn compute_normalization(train: &[CrownPatch]) -> Result<NormalizationStats> {
    compute_normalization_with_floor(train, None)
}

/// Same as [`compute_normalization`] but with an optional std floor for
/// degenerate (constant-channel) inputs.
pub fn compute_normalization_with_floor(
    train: &[CrownPatch],
    std_floor: Option<f64>,
) -> Result<NormalizationStats> {
    if train.is_empty() {
        return Err(Error::Data("cannot normalize an empty training set".into()));
    }
    let mut sum = [0.0f64; 3];
    let mut sumsq = [0.0f64; 3];
    let mut n = 0usize;
    for p in train {
        let side = p.side();
        n += side * side;
        for y in 0..side {
            for x in 0..side {
                for c in 0..3 {
                    let v = p.pixels[[y, x, c]] as f64 / 255.0;
                    sum[c] += v;
                    sumsq[c] += v * v;
                }
            }
        }
    }
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for c in 0..3 {
        mean[c] = sum[c] / n as f64;
        let var = (sumsq[c] / n as f64 - mean[c] * mean[c]).max(0.0);
        std[c] = var.sqrt();
        if std[c] <= 0.0 {
            match std_floor {
                Some(floor) if floor > 0.0 => std[c] = floor,
                _ => {
                    return Err(Error::Numeric(format!(
                        "channel {c} is constant (std = 0); configure a std floor \
                         (e.g. normalization.std_floor) to proceed"
                    )))
                }
            }
        }
    }
    Ok(NormalizationStats { mean, std })
}

/// Normalize a patch: `(pixels/255 - mean) / std` per channel.
pub fn normalize(patch: &CrownPatch, stats: &NormalizationStats) -> Array3<f64> {
    let side = patch.side();
    Array3::from_shape_fn((side, side, 3), |(y, x, c)| {
        (patch.pixels[[y, x, c]] as f64 / 255.0 - stats.mean[c]) / stats.std[c]
    })
}

/// Inverse of [`normalize`], recovering `pixels/255`.
pub fn denormalize(data: &Array3<f64>, stats: &NormalizationStats) -> Array3<f64> {
    let (h, w, _) = data.dim();
    Array3::from_shape_fn((h, w, 3), |(y, x, c)| data[[y, x, c]] * stats.std[c] + stats.mean[c])
}

/// Resize a patch's pixels to `side` with bilinear interpolation, keeping
/// metadata. Used before the network forward pass and for featurization.
pub fn resize_patch(patch: &CrownPatch, side: usize) -> CrownPatch {
    if patch.side() == side {
        return patch.clone();
    }
    let f = imageops::to_f64(&patch.pixels);
    let resized = imageops::resize_bilinear(&f, side, side);
    CrownPatch {
        pixels: imageops::to_u8_clamped(&resized),
        ..patch.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_patch(v: u8, side: usize, stage: AttackStage, id: &str) -> CrownPatch {
        CrownPatch::new(
            Array3::from_elem((side, side, 3), v),
            stage,
            FlightSpec::Jun60,
            id,
        )
        .unwrap()
    }

    #[test]
    fn parse_simple_row() {
        let text = "flight,tree_id,center_x,center_y,stage\nJun60,t001,512,640,Red\n";
        let anns = parse_annotations(text).unwrap();
        assert_eq!(anns.len(), 1);
        assert_eq!(
            anns[0],
            TreeAnnotation {
                flight: FlightSpec::Jun60,
                tree_id: "t001".into(),
                center_x: 512,
                center_y: 640,
                stage: AttackStage::Red,
            }
        );
    }

    #[test]
    fn parse_header_only_is_empty() {
        let anns = parse_annotations("flight,tree_id,center_x,center_y,stage\n").unwrap();
        assert!(anns.is_empty());
    }

    #[test]
    fn parse_errors_name_line() {
        let text = "flight,tree_id,center_x,center_y,stage\nJun60,t001,512,640,Green\nJun60,t002,1,2,Brown\n";
        match parse_annotations(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let text = "flight,tree_id,center_x,center_y,stage\nJun60,t001,x,640,Green\n";
        match parse_annotations(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let text = "flight,tree_id,center_x,center_y,stage\nJun60,t001,1,2\n";
        assert!(matches!(parse_annotations(text), Err(Error::Parse { line: 2, .. })));
    }

    fn gradient_raster(h: usize, w: usize) -> Array3<u8> {
        Array3::from_shape_fn((h, w, 3), |(y, x, c)| (y * 10 + x + c) as u8)
    }

    fn ann(cx: i64, cy: i64) -> TreeAnnotation {
        TreeAnnotation {
            flight: FlightSpec::Jun60,
            tree_id: "t".into(),
            center_x: cx,
            center_y: cy,
            stage: AttackStage::Green,
        }
    }

    #[test]
    fn extract_center_of_constant_raster() {
        let raster = Array3::from_elem((8, 8, 3), 77u8);
        let p = extract_patch(&raster, &ann(4, 4), 4).unwrap();
        assert_eq!(p.side(), 4);
        assert!(p.pixels.iter().all(|&v| v == 77));
    }

    #[test]
    fn extract_zero_fills_outside() {
        let raster = Array3::from_elem((8, 8, 3), 200u8);
        let p = extract_patch(&raster, &ann(0, 0), 4).unwrap();
        // Window spans rows/cols -2..2; the outside quadrants are zero.
        for y in 0..2 {
            for x in 0..2 {
                assert_eq!(p.pixels[[y, x, 0]], 0, "upper-left quadrant must be zero");
            }
        }
        assert_eq!(p.pixels[[2, 2, 0]], 200);
        assert_eq!(p.pixels[[3, 3, 0]], 200);
        assert_eq!(p.pixels[[0, 2, 0]], 0);
        assert_eq!(p.pixels[[2, 0, 0]], 0);
    }

    #[test]
    fn extract_matches_index_arithmetic() {
        let raster = gradient_raster(10, 10);
        let p = extract_patch(&raster, &ann(5, 5), 2).unwrap();
        for dy in 0..2 {
            for dx in 0..2 {
                for c in 0..3 {
                    assert_eq!(p.pixels[[dy, dx, c]], raster[[4 + dy, 4 + dx, c]]);
                }
            }
        }
    }

    #[test]
    fn extract_rejects_center_outside() {
        let raster = gradient_raster(10, 10);
        assert!(extract_patch(&raster, &ann(10, 5), 2).is_err());
        assert!(extract_patch(&raster, &ann(-1, 5), 2).is_err());
    }

    fn jun60_patches() -> Vec<CrownPatch> {
        let counts = [
            (AttackStage::Green, 68),
            (AttackStage::Yellow, 34),
            (AttackStage::Red, 24),
            (AttackStage::Leafless, 25),
        ];
        let mut out = Vec::new();
        for (stage, n) in counts {
            for i in 0..n {
                out.push(uniform_patch(10, 4, stage, &format!("{stage}-{i}")));
            }
        }
        out
    }

    #[test]
    fn split_totals_match_published_jun60() {
        let patches = jun60_patches();
        let split = stratified_split(&patches, 7, 16, 3).unwrap();
        assert_eq!(split.train.len(), 128);
        assert_eq!(split.val.len(), 7);
        assert_eq!(split.test.len(), 16);
    }

    #[test]
    fn split_single_class_proportionality() {
        let patches: Vec<CrownPatch> = (0..8)
            .map(|i| uniform_patch(i as u8, 4, AttackStage::Red, &format!("r{i}")))
            .collect();
        let split = stratified_split(&patches, 2, 2, 0).unwrap();
        assert_eq!(split.train.len(), 4);
        assert!(split.train.iter().all(|p| p.stage == AttackStage::Red));
    }

    #[test]
    fn split_is_deterministic() {
        let patches = jun60_patches();
        let a = stratified_split(&patches, 7, 16, 11).unwrap();
        let b = stratified_split(&patches, 7, 16, 11).unwrap();
        let ids = |v: &[CrownPatch]| v.iter().map(|p| p.tree_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a.train), ids(&b.train));
        assert_eq!(ids(&a.val), ids(&b.val));
        assert_eq!(ids(&a.test), ids(&b.test));
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let patches = jun60_patches();
        let split = stratified_split(&patches, 7, 16, 5).unwrap();
        let mut all: Vec<String> = split
            .train
            .iter()
            .chain(&split.val)
            .chain(&split.test)
            .map(|p| p.tree_id.clone())
            .collect();
        all.sort();
        let mut expected: Vec<String> = patches.iter().map(|p| p.tree_id.clone()).collect();
        expected.sort();
        assert_eq!(all, expected);
    }

    #[test]
    fn split_stratification_within_one_sample() {
        let patches = jun60_patches();
        let split = stratified_split(&patches, 7, 16, 5).unwrap();
        let total = patches.len() as f64;
        for stage in AttackStage::ALL {
            let global = patches.iter().filter(|p| p.stage == stage).count() as f64 / total;
            let in_train = split.train.iter().filter(|p| p.stage == stage).count() as f64;
            let expected = global * split.train.len() as f64;
            assert!(
                (in_train - expected).abs() <= 1.0 + 1e-9,
                "{stage}: train count {in_train} vs proportional {expected}"
            );
        }
    }

    #[test]
    fn split_pins_green_train_count() {
        let patches = jun60_patches();
        let split =
            stratified_split_pinned(&patches, 7, 16, 5, Some((AttackStage::Green, 58))).unwrap();
        let green_train = split.train.iter().filter(|p| p.stage == AttackStage::Green).count();
        assert_eq!(green_train, 58);
        assert_eq!(split.train.len(), 128);
        assert_eq!(split.val.len(), 7);
        assert_eq!(split.test.len(), 16);
    }

    #[test]
    fn split_infeasible_counts_rejected() {
        let patches: Vec<CrownPatch> = (0..4)
            .map(|i| uniform_patch(0, 4, AttackStage::Green, &format!("g{i}")))
            .collect();
        assert!(stratified_split(&patches, 2, 2, 0).is_err());
    }

    #[test]
    fn normalization_two_point_distribution() {
        let mut pixels = Array3::zeros((2, 2, 3));
        for c in 0..3 {
            pixels[[0, 0, c]] = 255u8;
            pixels[[0, 1, c]] = 255u8;
        }
        let p = CrownPatch::new(pixels, AttackStage::Green, FlightSpec::Jun60, "t").unwrap();
        let stats = compute_normalization(&[p]).unwrap();
        for c in 0..3 {
            assert!((stats.mean[c] - 0.5).abs() < 1e-12);
            assert!((stats.std[c] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_rejects_constant_channel() {
        let p = uniform_patch(0, 4, AttackStage::Green, "t");
        let err = compute_normalization(&[p.clone()]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        // Epsilon floor makes it usable.
        let stats = compute_normalization_with_floor(&[p], Some(1e-3)).unwrap();
        assert_eq!(stats.mean, [0.0, 0.0, 0.0]);
        assert_eq!(stats.std, [1e-3, 1e-3, 1e-3]);
    }

    #[test]
    fn normalization_matches_brute_force() {
        use rand::Rng;
        let mut rng = substream_rng(99, 0, 0);
        let patches: Vec<CrownPatch> = (0..100)
            .map(|i| {
                let pixels = Array3::from_shape_fn((6, 6, 3), |_| rng.gen::<u8>());
                CrownPatch::new(pixels, AttackStage::Green, FlightSpec::Jun60, format!("p{i}"))
                    .unwrap()
            })
            .collect();
        let stats = compute_normalization(&patches).unwrap();
        // Brute-force single-pass over the concatenated pixel list.
        for c in 0..3 {
            let vals: Vec<f64> = patches
                .iter()
                .flat_map(|p| p.pixels.iter().copied().collect::<Vec<u8>>())
                .enumerate()
                .filter(|(i, _)| i % 3 == c)
                .map(|(_, v)| v as f64 / 255.0)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!((stats.mean[c] - mean).abs() < 1e-6);
            assert!((stats.std[c] - var.sqrt()).abs() < 1e-6);
        }
    }

    #[test]
    fn normalize_centering_and_identity() {
        // Pixel value 255*mean maps to 0.
        let stats = NormalizationStats {
            mean: [0.4, 0.4, 0.4],
            std: [0.25, 0.25, 0.25],
        };
        let p = uniform_patch(102, 2, AttackStage::Green, "t"); // 102/255 = 0.4
        let out = normalize(&p, &stats);
        for v in out.iter() {
            assert!(v.abs() < 1e-12);
        }
        // Identity stats pass pixels/255 through.
        let id = NormalizationStats { mean: [0.0; 3], std: [1.0; 3] };
        let p = uniform_patch(51, 2, AttackStage::Green, "t");
        let out = normalize(&p, &id);
        for v in out.iter() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_whole_train_split_self_stats() {
        use rand::Rng;
        let mut rng = substream_rng(7, 0, 0);
        let patches: Vec<CrownPatch> = (0..40)
            .map(|i| {
                let pixels = Array3::from_shape_fn((8, 8, 3), |_| rng.gen::<u8>());
                CrownPatch::new(pixels, AttackStage::Green, FlightSpec::Jun60, format!("p{i}"))
                    .unwrap()
            })
            .collect();
        let stats = compute_normalization(&patches).unwrap();
        let mut sum = [0.0f64; 3];
        let mut sumsq = [0.0f64; 3];
        let mut n = 0usize;
        for p in &patches {
            let out = normalize(p, &stats);
            n += p.side() * p.side();
            for ((_, _, c), v) in out.indexed_iter() {
                sum[c] += v;
                sumsq[c] += v * v;
            }
        }
        for c in 0..3 {
            let mean = sum[c] / n as f64;
            let std = (sumsq[c] / n as f64 - mean * mean).sqrt();
            assert!(mean.abs() < 1e-5, "channel {c} mean {mean}");
            assert!((std - 1.0).abs() < 1e-5, "channel {c} std {std}");
        }
    }

    #[test]
    fn normalization_round_trip() {
        use rand::Rng;
        let mut rng = substream_rng(13, 0, 0);
        let pixels = Array3::from_shape_fn((5, 5, 3), |_| rng.gen::<u8>());
        let p = CrownPatch::new(pixels, AttackStage::Red, FlightSpec::Jul90, "t").unwrap();
        let stats = NormalizationStats {
            mean: [0.3, 0.5, 0.7],
            std: [0.2, 0.1, 0.3],
        };
        let back = denormalize(&normalize(&p, &stats), &stats);
        for ((y, x, c), v) in back.indexed_iter() {
            assert!((v - p.pixels[[y, x, c]] as f64 / 255.0).abs() < 1e-6);
        }
    }
}
