//! The six probabilistic augmentation strategies and the balance-to-majority
//! dataset generation rule.

use crate::data::CrownPatch;
use crate::error::{Error, Result};
use crate::imageops;
use crate::rng::substream_rng;
use crate::stage::{AttackStage, NUM_STAGES};
use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Augmentation strategy used to generate minority-class samples.
/// `None` is the without-augmentation ablation arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AugmentationStrategy {
    None,
    AffineWarp,
    Flips,
    Rotations,
    Crop85,
    ColorJitter,
    GaussianBlur5,
}

impl AugmentationStrategy {
    pub const ALL: [AugmentationStrategy; 7] = [
        AugmentationStrategy::None,
        AugmentationStrategy::AffineWarp,
        AugmentationStrategy::Flips,
        AugmentationStrategy::Rotations,
        AugmentationStrategy::Crop85,
        AugmentationStrategy::ColorJitter,
        AugmentationStrategy::GaussianBlur5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentationStrategy::None => "None",
            AugmentationStrategy::AffineWarp => "AffineWarp",
            AugmentationStrategy::Flips => "Flips",
            AugmentationStrategy::Rotations => "Rotations",
            AugmentationStrategy::Crop85 => "Crop85",
            AugmentationStrategy::ColorJitter => "ColorJitter",
            AugmentationStrategy::GaussianBlur5 => "GaussianBlur5",
        }
    }
}

impl fmt::Display for AugmentationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugmentationStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown augmentation strategy `{s}`")))
    }
}

/// Ranges for the randomized transforms. Crop factor and blur kernel size
/// are fixed by the method; the rest are configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationParams {
    pub max_rotation_deg: f64,
    pub max_shear_deg: f64,
    pub scale_range: (f64, f64),
    pub max_translation_frac: f64,
    pub brightness_range: (f64, f64),
    pub contrast_range: (f64, f64),
    pub saturation_range: (f64, f64),
    pub blur_sigma: f64,
}

/// Fixed by the method: random crops keep 85% of the side.
pub const CROP_FACTOR: f64 = 0.85;
/// Fixed by the method: Gaussian blur kernel size.
pub const BLUR_KERNEL: usize = 5;

impl Default for AugmentationParams {
    fn default() -> Self {
        AugmentationParams {
            max_rotation_deg: 15.0,
            max_shear_deg: 10.0,
            scale_range: (0.9, 1.1),
            max_translation_frac: 0.1,
            brightness_range: (0.6, 1.4),
            contrast_range: (0.6, 1.4),
            saturation_range: (0.6, 1.4),
            blur_sigma: 1.0,
        }
    }
}

/// How many synthetic samples each class needs to match the majority.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BalancePlan {
    pub majority: AttackStage,
    pub majority_count: usize,
    /// Indexed by class ordinal; majority entry is 0.
    pub deficits: [usize; NUM_STAGES],
}

impl BalancePlan {
    /// Total sample count after balancing.
    pub fn balanced_total(&self) -> usize {
        self.majority_count * NUM_STAGES
    }
}

/// Compute per-class deficits against the most frequent class.
pub fn plan_balance(train: &[CrownPatch]) -> Result<BalancePlan> {
    let mut counts = [0usize; NUM_STAGES];
    for p in train {
        counts[p.stage.ordinal()] += 1;
    }
    if let Some(empty) = AttackStage::ALL.iter().find(|s| counts[s.ordinal()] == 0) {
        return Err(Error::Data(format!("class {empty} has no training samples")));
    }
    let majority_ord = (0..NUM_STAGES).max_by_key(|&i| (counts[i], NUM_STAGES - i)).unwrap();
    let majority_count = counts[majority_ord];
    let mut deficits = [0usize; NUM_STAGES];
    for i in 0..NUM_STAGES {
        deficits[i] = majority_count - counts[i];
    }
    Ok(BalancePlan {
        majority: AttackStage::from_ordinal(majority_ord).unwrap(),
        majority_count,
        deficits,
    })
}

/// A sampled affine map acting on coordinates centered on the patch.
/// `out = linear * in + translation`, both in (x, y) pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub linear: [[f64; 2]; 2],
    pub translation: [f64; 2],
}

impl AffineTransform {
    pub fn identity() -> Self {
        AffineTransform {
            linear: [[1.0, 0.0], [0.0, 1.0]],
            translation: [0.0, 0.0],
        }
    }

    /// Forward-map a centered (x, y) coordinate.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.linear[0][0] * x + self.linear[0][1] * y + self.translation[0],
            self.linear[1][0] * x + self.linear[1][1] * y + self.translation[1],
        )
    }

    pub fn invert(&self) -> Result<AffineTransform> {
        let [[a, b], [c, d]] = self.linear;
        let det = a * d - b * c;
        if det.abs() < 1e-12 {
            return Err(Error::Numeric("affine transform is singular".into()));
        }
        let inv = [[d / det, -b / det], [-c / det, a / det]];
        let tx = -(inv[0][0] * self.translation[0] + inv[0][1] * self.translation[1]);
        let ty = -(inv[1][0] * self.translation[0] + inv[1][1] * self.translation[1]);
        Ok(AffineTransform {
            linear: inv,
            translation: [tx, ty],
        })
    }
}

/// Sample rotation, shear, scale, and translation from the configured ranges.
pub fn sample_affine(params: &AugmentationParams, side: usize, rng: &mut ChaCha8Rng) -> AffineTransform {
    let rot = rng.gen_range(-params.max_rotation_deg..=params.max_rotation_deg).to_radians();
    let shear_x = rng.gen_range(-params.max_shear_deg..=params.max_shear_deg).to_radians();
    let shear_y = rng.gen_range(-params.max_shear_deg..=params.max_shear_deg).to_radians();
    let scale = rng.gen_range(params.scale_range.0..=params.scale_range.1);
    let max_t = params.max_translation_frac * side as f64;
    let tx = rng.gen_range(-max_t..=max_t);
    let ty = rng.gen_range(-max_t..=max_t);

    let (sin, cos) = rot.sin_cos();
    let rotm = [[cos, -sin], [sin, cos]];
    let shm = [[1.0, shear_x.tan()], [shear_y.tan(), 1.0]];
    // linear = scale * R * Sh
    let mut linear = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            linear[i][j] = scale * (rotm[i][0] * shm[0][j] + rotm[i][1] * shm[1][j]);
        }
    }
    AffineTransform {
        linear,
        translation: [tx, ty],
    }
}

/// Resample a patch through an affine map (bilinear, zero fill outside).
pub fn warp_affine(patch: &CrownPatch, transform: &AffineTransform) -> Result<CrownPatch> {
    let side = patch.side();
    let center = (side as f64 - 1.0) / 2.0;
    let inv = transform.invert()?;
    let src = imageops::to_f64(&patch.pixels);
    let mut out = Array3::zeros((side, side, 3));
    for oy in 0..side {
        for ox in 0..side {
            let (sx, sy) = inv.apply(ox as f64 - center, oy as f64 - center);
            let (sx, sy) = (sx + center, sy + center);
            for c in 0..3 {
                out[[oy, ox, c]] = imageops::sample_zero_fill(&src, sy, sx, c);
            }
        }
    }
    Ok(CrownPatch {
        pixels: imageops::to_u8_clamped(&out),
        synthetic: true,
        ..patch.clone()
    })
}

/// Random affine warp with parameters sampled from `params`.
pub fn apply_affine_warp(
    patch: &CrownPatch,
    params: &AugmentationParams,
    rng: &mut ChaCha8Rng,
) -> Result<CrownPatch> {
    let t = sample_affine(params, patch.side(), rng);
    warp_affine(patch, &t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipAxis {
    /// Mirror left-right.
    Horizontal,
    /// Mirror top-bottom.
    Vertical,
}

/// Exact mirror about the given axis.
pub fn apply_flip(patch: &CrownPatch, axis: FlipAxis) -> CrownPatch {
    let side = patch.side();
    let pixels = Array3::from_shape_fn((side, side, 3), |(y, x, c)| match axis {
        FlipAxis::Horizontal => patch.pixels[[y, side - 1 - x, c]],
        FlipAxis::Vertical => patch.pixels[[side - 1 - y, x, c]],
    });
    CrownPatch {
        pixels,
        synthetic: true,
        ..patch.clone()
    }
}

/// Exact clockwise rotation by 90, 180, or 270 degrees (pixel permutation).
pub fn apply_rotation(patch: &CrownPatch, angle: u32) -> Result<CrownPatch> {
    let side = patch.side();
    let s = side - 1;
    let pixels = match angle {
        90 => Array3::from_shape_fn((side, side, 3), |(y, x, c)| patch.pixels[[s - x, y, c]]),
        180 => Array3::from_shape_fn((side, side, 3), |(y, x, c)| patch.pixels[[s - y, s - x, c]]),
        270 => Array3::from_shape_fn((side, side, 3), |(y, x, c)| patch.pixels[[x, s - y, c]]),
        other => return Err(Error::Config(format!("unsupported rotation angle {other}"))),
    };
    Ok(CrownPatch {
        pixels,
        synthetic: true,
        ..patch.clone()
    })
}

/// Crop-and-resize with a fixed window position (deterministic core of
/// [`apply_crop85`]).
pub fn crop_resize(patch: &CrownPatch, top: usize, left: usize, window: usize) -> Result<CrownPatch> {
    let side = patch.side();
    if window < 2 {
        return Err(Error::Data(format!("crop window {window} px is too small")));
    }
    if top + window > side || left + window > side {
        return Err(Error::Data("crop window outside patch".into()));
    }
    let src = imageops::to_f64(&patch.pixels);
    let cropped = Array3::from_shape_fn((window, window, 3), |(y, x, c)| src[[top + y, left + x, c]]);
    let resized = imageops::resize_bilinear(&cropped, side, side);
    Ok(CrownPatch {
        pixels: imageops::to_u8_clamped(&resized),
        synthetic: true,
        ..patch.clone()
    })
}

/// Random 85% crop followed by bilinear resize back to the original side.
pub fn apply_crop85(patch: &CrownPatch, rng: &mut ChaCha8Rng) -> Result<CrownPatch> {
    let side = patch.side();
    let window = (CROP_FACTOR * side as f64).round() as usize;
    if window < 2 {
        return Err(Error::Data(format!(
            "85% crop of side {side} yields a window below 2 px"
        )));
    }
    let top = rng.gen_range(0..=side - window);
    let left = rng.gen_range(0..=side - window);
    crop_resize(patch, top, left, window)
}

fn gray_value(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Color jitter with explicit factors: brightness scale, contrast about the
/// patch mean luma, saturation about per-pixel gray, clamped to [0,255].
pub fn color_jitter_with_factors(
    patch: &CrownPatch,
    brightness: f64,
    contrast: f64,
    saturation: f64,
) -> CrownPatch {
    let side = patch.side();
    let mut data = imageops::to_f64(&patch.pixels);
    data.mapv_inplace(|v| v * brightness);

    let mut luma_sum = 0.0;
    for y in 0..side {
        for x in 0..side {
            luma_sum += gray_value(data[[y, x, 0]], data[[y, x, 1]], data[[y, x, 2]]);
        }
    }
    let mean_luma = luma_sum / (side * side) as f64;
    data.mapv_inplace(|v| (v - mean_luma) * contrast + mean_luma);

    for y in 0..side {
        for x in 0..side {
            let gray = gray_value(data[[y, x, 0]], data[[y, x, 1]], data[[y, x, 2]]);
            for c in 0..3 {
                data[[y, x, c]] = (data[[y, x, c]] - gray) * saturation + gray;
            }
        }
    }
    CrownPatch {
        pixels: imageops::to_u8_clamped(&data),
        synthetic: true,
        ..patch.clone()
    }
}

/// Random brightness/contrast/saturation jitter.
pub fn apply_color_jitter(
    patch: &CrownPatch,
    params: &AugmentationParams,
    rng: &mut ChaCha8Rng,
) -> CrownPatch {
    let b = rng.gen_range(params.brightness_range.0..=params.brightness_range.1);
    let c = rng.gen_range(params.contrast_range.0..=params.contrast_range.1);
    let s = rng.gen_range(params.saturation_range.0..=params.saturation_range.1);
    color_jitter_with_factors(patch, b, c, s)
}

/// Normalized 1-D Gaussian kernel of size 5.
pub fn gaussian_kernel5(sigma: f64) -> Result<[f64; 5]> {
    if sigma <= 0.0 {
        return Err(Error::Config(format!("blur sigma must be positive, got {sigma}")));
    }
    let mut k = [0.0; 5];
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - 2.0;
        *v = (-d * d / (2.0 * sigma * sigma)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    Ok(k)
}

/// Reflect-101 index mirroring (edge pixel not repeated).
fn reflect(idx: i64, n: usize) -> usize {
    let n = n as i64;
    let mut i = idx;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
        if n == 1 {
            return 0;
        }
    }
}

/// Separable 5×5 Gaussian blur with reflect-edge handling.
pub fn apply_gaussian_blur(patch: &CrownPatch, sigma: f64) -> Result<CrownPatch> {
    let k = gaussian_kernel5(sigma)?;
    let side = patch.side();
    let src = imageops::to_f64(&patch.pixels);
    // Horizontal pass.
    let mut tmp = Array3::zeros((side, side, 3));
    for y in 0..side {
        for x in 0..side {
            for c in 0..3 {
                let mut acc = 0.0;
                for (t, &w) in k.iter().enumerate() {
                    acc += w * src[[y, reflect(x as i64 + t as i64 - 2, side), c]];
                }
                tmp[[y, x, c]] = acc;
            }
        }
    }
    // Vertical pass.
    let mut out = Array3::zeros((side, side, 3));
    for y in 0..side {
        for x in 0..side {
            for c in 0..3 {
                let mut acc = 0.0;
                for (t, &w) in k.iter().enumerate() {
                    acc += w * tmp[[reflect(y as i64 + t as i64 - 2, side), x, c]];
                }
                out[[y, x, c]] = acc;
            }
        }
    }
    Ok(CrownPatch {
        pixels: imageops::to_u8_clamped(&out),
        synthetic: true,
        ..patch.clone()
    })
}

/// One synthetic sample in the augmented-set manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticRecord {
    pub tree_id: String,
    pub source_tree_id: String,
    pub strategy: AugmentationStrategy,
    pub seed: u64,
}

fn apply_strategy(
    patch: &CrownPatch,
    strategy: AugmentationStrategy,
    params: &AugmentationParams,
    rng: &mut ChaCha8Rng,
) -> Result<CrownPatch> {
    match strategy {
        AugmentationStrategy::None => Err(Error::Config(
            "strategy None generates no samples; skip balancing instead".into(),
        )),
        AugmentationStrategy::AffineWarp => apply_affine_warp(patch, params, rng),
        AugmentationStrategy::Flips => {
            let axis = if rng.gen_bool(0.5) { FlipAxis::Horizontal } else { FlipAxis::Vertical };
            Ok(apply_flip(patch, axis))
        }
        AugmentationStrategy::Rotations => {
            let angle = [90u32, 180, 270][rng.gen_range(0..3)];
            apply_rotation(patch, angle)
        }
        AugmentationStrategy::Crop85 => apply_crop85(patch, rng),
        AugmentationStrategy::ColorJitter => Ok(apply_color_jitter(patch, params, rng)),
        AugmentationStrategy::GaussianBlur5 => apply_gaussian_blur(patch, params.blur_sigma),
    }
}

/// Append synthetic minority-class samples until every class matches the
/// majority count. Source patches are drawn uniformly with replacement;
/// per-sample RNG substreams make the result order-independent.
pub fn balance_dataset(
    train: &[CrownPatch],
    strategy: AugmentationStrategy,
    params: &AugmentationParams,
    seed: u64,
) -> Result<(Vec<CrownPatch>, Vec<SyntheticRecord>)> {
    if strategy == AugmentationStrategy::None {
        return Err(Error::Config(
            "strategy None requested; skip the balancing step for the no-augmentation arm".into(),
        ));
    }
    let plan = plan_balance(train)?;
    let mut out: Vec<CrownPatch> = train.to_vec();
    let mut records = Vec::new();
    for stage in AttackStage::ALL {
        let deficit = plan.deficits[stage.ordinal()];
        if deficit == 0 {
            continue;
        }
        let sources: Vec<&CrownPatch> = train.iter().filter(|p| p.stage == stage).collect();
        for i in 0..deficit {
            let sample_seed = crate::rng::derive_seed(seed, stage.ordinal() as u64, i as u64);
            let mut rng = substream_rng(seed, stage.ordinal() as u64, i as u64);
            let src = sources[rng.gen_range(0..sources.len())];
            let mut synth = apply_strategy(src, strategy, params, &mut rng)?;
            let tree_id = format!("syn-{}-{}", stage.name().to_lowercase(), i);
            synth.tree_id = tree_id.clone();
            records.push(SyntheticRecord {
                tree_id,
                source_tree_id: src.tree_id.clone(),
                strategy,
                seed: sample_seed,
            });
            out.push(synth);
        }
    }
    Ok((out, records))
}
