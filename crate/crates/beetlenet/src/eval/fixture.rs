//! Synthetic desk-scale stand-in for the unavailable field dataset: noisy
//! class-colored crown discs on soil-toned backgrounds.

use crate::data::CrownPatch;
use crate::error::{Error, Result};
use crate::rng::substream_rng;
use crate::stage::{AttackStage, FlightSpec};
use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Fixture geometry and randomness settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureSpec {
    pub per_class: usize,
    pub side: usize,
    /// Probability of an intruding red disc at the patch border, emulating
    /// crown overlap from neighbouring infested trees.
    pub overlap: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            per_class: 50,
            side: 64,
            overlap: 0.0,
            seed: 0,
        }
    }
}

const SOIL: [f64; 3] = [118.0, 94.0, 70.0];
const CROWN_COLORS: [[f64; 3]; 4] = [
    [58.0, 142.0, 62.0],   // Green: healthy canopy
    [198.0, 182.0, 58.0],  // Yellow: fading needles
    [172.0, 74.0, 48.0],   // Red: dead needles still attached
    [138.0, 138.0, 138.0], // Leafless: bare gray branches
];
const INTRUDER: [f64; 3] = CROWN_COLORS[2];

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Render one crown patch for `stage` using the given RNG.
fn render_patch(stage: AttackStage, side: usize, overlap: f64, rng: &mut impl Rng) -> Array3<u8> {
    let s = side as f64;
    let center = (s - 1.0) / 2.0;
    let radius = 0.38 * s;
    // Small per-patch color wobble so patches are not identical up to noise.
    let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-12.0..12.0));
    let intruding = rng.gen_range(0.0..1.0) < overlap;
    let (ix, iy) = if intruding {
        // Disc center just outside a random edge.
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        (center + s * 0.5 * angle.cos(), center + s * 0.5 * angle.sin())
    } else {
        (0.0, 0.0)
    };
    let intruder_radius = 0.28 * s;
    // Pre-draw the per-pixel decisions in a fixed scan order so the RNG
    // stream is stable regardless of branch outcomes.
    let mut pixels = Array3::zeros((side, side, 3));
    for y in 0..side {
        for x in 0..side {
            let dx = x as f64 - center;
            let dy = y as f64 - center;
            let in_crown = (dx * dx + dy * dy).sqrt() <= radius;
            let speckle = rng.gen_range(0.0..1.0) < 0.3;
            let noise: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-18.0..18.0));
            let idx = x as f64 - ix;
            let idy = y as f64 - iy;
            let in_intruder =
                intruding && (idx * idx + idy * idy).sqrt() <= intruder_radius;
            let base = if in_intruder {
                INTRUDER
            } else if in_crown {
                // Leafless crowns are sparse: soil shows through except
                // where a branch speckle lands.
                if stage == AttackStage::Leafless && !speckle {
                    SOIL
                } else {
                    CROWN_COLORS[stage.ordinal()]
                }
            } else {
                SOIL
            };
            for c in 0..3 {
                let tinted = if in_crown || in_intruder { tint[c] } else { 0.0 };
                pixels[[y, x, c]] = clamp_u8(base[c] + tinted + noise[c]);
            }
        }
    }
    pixels
}

/// Deterministically render `per_class` patches for each attack stage.
pub fn make_synthetic_fixture(spec: &FixtureSpec) -> Result<Vec<CrownPatch>> {
    if spec.side < 8 {
        return Err(Error::Config(format!(
            "fixture side must be at least 8, got {}",
            spec.side
        )));
    }
    if !(0.0..=1.0).contains(&spec.overlap) {
        return Err(Error::Config(format!(
            "overlap must lie in [0, 1], got {}",
            spec.overlap
        )));
    }
    let mut out = Vec::with_capacity(4 * spec.per_class);
    for stage in AttackStage::ALL {
        for i in 0..spec.per_class {
            let mut rng = substream_rng(spec.seed, stage.ordinal() as u64, i as u64);
            let pixels = render_patch(stage, spec.side, spec.overlap, &mut rng);
            out.push(CrownPatch::new(
                pixels,
                stage,
                FlightSpec::Jun60,
                format!("fx-{}-{i}", stage.name().to_lowercase()),
            )?);
        }
    }
    Ok(out)
}

/// Paths produced by [`write_fixture_dataset`].
#[derive(Debug, Clone)]
pub struct FixtureDataset {
    pub annotations: PathBuf,
    pub orthomosaics: Vec<(FlightSpec, PathBuf)>,
}

/// Render one orthomosaic PNG per flight (patches tiled on a shared soil
/// canvas) plus a matching annotations CSV, giving the CLI a complete
/// synthetic input directory.
pub fn write_fixture_dataset(
    spec: &FixtureSpec,
    flights: &[FlightSpec],
    dir: &Path,
) -> Result<FixtureDataset> {
    if flights.is_empty() {
        return Err(Error::Config("fixture dataset needs at least one flight".into()));
    }
    std::fs::create_dir_all(dir)?;
    let total = 4 * spec.per_class;
    let cols = (total as f64).sqrt().ceil().max(1.0) as usize;
    let rows = total.div_ceil(cols);
    let canvas_w = (cols * spec.side) as u32;
    let canvas_h = (rows * spec.side) as u32;

    let mut csv = String::from("flight,tree_id,center_x,center_y,stage\n");
    let mut orthomosaics = Vec::new();
    for (f_idx, flight) in flights.iter().enumerate() {
        // Distinct pixels per flight via a flight-offset seed.
        let flight_spec = FixtureSpec {
            seed: spec.seed.wrapping_add(1 + f_idx as u64),
            ..spec.clone()
        };
        let patches = make_synthetic_fixture(&flight_spec)?;
        let mut canvas = image::RgbImage::new(canvas_w, canvas_h);
        // Soil-toned canvas so off-patch context looks plausible.
        for pixel in canvas.pixels_mut() {
            *pixel = image::Rgb([118, 94, 70]);
        }
        for (i, patch) in patches.iter().enumerate() {
            let (row, col) = (i / cols, i % cols);
            let (x0, y0) = (col * spec.side, row * spec.side);
            for y in 0..spec.side {
                for x in 0..spec.side {
                    canvas.put_pixel(
                        (x0 + x) as u32,
                        (y0 + y) as u32,
                        image::Rgb([
                            patch.pixels[[y, x, 0]],
                            patch.pixels[[y, x, 1]],
                            patch.pixels[[y, x, 2]],
                        ]),
                    );
                }
            }
            let cx = x0 + spec.side / 2;
            let cy = y0 + spec.side / 2;
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                flight.name(),
                format_args!("{}-{}", flight.name(), patch.tree_id),
                cx,
                cy,
                patch.stage.name()
            ));
        }
        let path = dir.join(format!("{}.png", flight.name()));
        canvas
            .save(&path)
            .map_err(|e| Error::Data(format!("writing {}: {e}", path.display())))?;
        orthomosaics.push((*flight, path));
    }
    let annotations = dir.join("annotations.csv");
    std::fs::write(&annotations, csv)?;
    Ok(FixtureDataset {
        annotations,
        orthomosaics,
    })
}
