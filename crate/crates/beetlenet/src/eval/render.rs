//! Deterministic CSV and SVG renderers for the analysis artifacts.
//!
//! Output layout under the chosen directory:
//! - `metrics/accuracy.csv` — per-flight, macro, and micro accuracy
//! - `metrics/confusion_<flight>.csv` — raw 4x4 counts
//! - `plots/confusion_<flight>.svg` — heatmap
//! - `plots/mean_color.svg` / `plots/histogram_<stage>.svg` — color analyses
//! - `tsne/<strategy>.csv` (+ `plots/tsne_<strategy>.svg`) — embeddings

use crate::error::{Error, Result};
use crate::eval::{AccuracyReport, ColorHistogram, ConfusionMatrix, Embedding2D};
use crate::stage::{AttackStage, FlightSpec, NUM_STAGES};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Fixed class palette: green / yellow / red / gray.
pub const CLASS_COLORS: [&str; NUM_STAGES] = ["#3a8f3e", "#c6b63a", "#ac4a30", "#8a8a8a"];

const CANVAS_W: f64 = 640.0;
const CANVAS_H: f64 = 480.0;
const MARGIN: f64 = 48.0;

fn svg_open(out: &mut String) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CANVAS_W}\" height=\"{CANVAS_H}\" \
         viewBox=\"0 0 {CANVAS_W} {CANVAS_H}\">\n\
         <rect width=\"{CANVAS_W}\" height=\"{CANVAS_H}\" fill=\"white\"/>\n"
    );
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, contents).map_err(|e| {
        Error::Data(format!("writing {}: {e}", path.display()))
    })
}

/// `metrics/accuracy.csv`: `scope,accuracy` rows.
pub fn accuracy_csv(report: &AccuracyReport) -> String {
    let mut out = String::from("scope,accuracy\n");
    for (flight, acc) in &report.per_flight {
        let _ = writeln!(out, "{},{:.6}", flight.name(), acc);
    }
    let _ = writeln!(out, "macro,{:.6}", report.macro_average);
    let _ = writeln!(out, "micro,{:.6}", report.micro_average);
    out
}

/// Raw counts with stage-name headers; rows are true classes.
pub fn confusion_csv(matrix: &ConfusionMatrix) -> String {
    let mut out = String::from("true\\pred");
    for stage in AttackStage::ALL {
        let _ = write!(out, ",{}", stage.name());
    }
    out.push('\n');
    for (i, stage) in AttackStage::ALL.iter().enumerate() {
        let _ = write!(out, "{}", stage.name());
        for j in 0..NUM_STAGES {
            let _ = write!(out, ",{}", matrix.counts[i][j]);
        }
        out.push('\n');
    }
    out
}

/// Heatmap SVG: cell shade scales with count / row total.
pub fn confusion_svg(matrix: &ConfusionMatrix, title: &str) -> String {
    let mut out = String::new();
    svg_open(&mut out);
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"24\" font-family=\"monospace\" font-size=\"16\" \
         text-anchor=\"middle\">{title}</text>",
        CANVAS_W / 2.0
    );
    let grid = (CANVAS_H - 2.0 * MARGIN).min(CANVAS_W - 2.0 * MARGIN);
    let cell = grid / NUM_STAGES as f64;
    let (x0, y0) = ((CANVAS_W - grid) / 2.0, MARGIN);
    let row_sums = matrix.row_sums();
    for i in 0..NUM_STAGES {
        for j in 0..NUM_STAGES {
            let frac = if row_sums[i] > 0 {
                matrix.counts[i][j] as f64 / row_sums[i] as f64
            } else {
                0.0
            };
            // White (0) to deep blue (1).
            let shade = (255.0 * (1.0 - frac)).round() as u8;
            let _ = writeln!(
                out,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" \
                 fill=\"rgb({shade},{shade},255)\" stroke=\"black\"/>",
                x0 + j as f64 * cell,
                y0 + i as f64 * cell,
            );
            let _ = writeln!(
                out,
                "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"14\" \
                 text-anchor=\"middle\">{}</text>",
                x0 + (j as f64 + 0.5) * cell,
                y0 + (i as f64 + 0.55) * cell,
                matrix.counts[i][j]
            );
        }
        // Axis labels: true class on the left, predicted on top.
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"12\" \
             text-anchor=\"end\">{}</text>",
            x0 - 6.0,
            y0 + (i as f64 + 0.55) * cell,
            AttackStage::ALL[i].name()
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"12\" \
             text-anchor=\"middle\">{}</text>",
            x0 + (i as f64 + 0.5) * cell,
            y0 - 8.0,
            AttackStage::ALL[i].name()
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Generic labelled 2-D scatter in class colors, axes fit to the data.
pub fn scatter_svg(points: &[([f64; 2], AttackStage)], title: &str) -> String {
    let mut out = String::new();
    svg_open(&mut out);
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"24\" font-family=\"monospace\" font-size=\"16\" \
         text-anchor=\"middle\">{title}</text>",
        CANVAS_W / 2.0
    );
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for ([x, y], _) in points {
        min_x = min_x.min(*x);
        max_x = max_x.max(*x);
        min_y = min_y.min(*y);
        max_y = max_y.max(*y);
    }
    let span_x = (max_x - min_x).max(1e-9);
    let span_y = (max_y - min_y).max(1e-9);
    for ([x, y], stage) in points {
        let px = MARGIN + (x - min_x) / span_x * (CANVAS_W - 2.0 * MARGIN);
        let py = CANVAS_H - MARGIN - (y - min_y) / span_y * (CANVAS_H - 2.0 * MARGIN);
        let _ = writeln!(
            out,
            "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3\" fill=\"{}\" fill-opacity=\"0.8\"/>",
            CLASS_COLORS[stage.ordinal()]
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Bar series SVG for one class's RGB histograms (three overlaid series).
pub fn histogram_svg(hist: &ColorHistogram) -> String {
    let mut out = String::new();
    svg_open(&mut out);
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"24\" font-family=\"monospace\" font-size=\"16\" \
         text-anchor=\"middle\">RGB histogram: {}</text>",
        CANVAS_W / 2.0,
        hist.stage.name()
    );
    let max = hist
        .bins
        .iter()
        .flatten()
        .copied()
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let colors = ["#d04040", "#40a040", "#4060d0"];
    let plot_w = CANVAS_W - 2.0 * MARGIN;
    let plot_h = CANVAS_H - 2.0 * MARGIN;
    let bar_w = plot_w / 256.0;
    for (channel, bins) in hist.bins.iter().enumerate() {
        for (value, &count) in bins.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let h = count as f64 / max * plot_h;
            let _ = writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{bar_w:.2}\" height=\"{h:.2}\" \
                 fill=\"{}\" fill-opacity=\"0.45\"/>",
                MARGIN + value as f64 * bar_w,
                CANVAS_H - MARGIN - h,
                colors[channel]
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// `tsne/<strategy>.csv` body with columns `x,y,label`.
pub fn embedding_csv(embedding: &Embedding2D) -> Result<String> {
    if embedding.labels.len() != embedding.points.len() {
        return Err(Error::Data("embedding is missing labels".into()));
    }
    let mut out = String::from("x,y,label\n");
    for (point, label) in embedding.points.iter().zip(&embedding.labels) {
        let _ = writeln!(out, "{:.6},{:.6},{}", point[0], point[1], label.name());
    }
    Ok(out)
}

/// Everything `render_outputs` can draw; unused slots stay empty.
#[derive(Default)]
pub struct RenderInputs<'a> {
    pub accuracy: Option<&'a AccuracyReport>,
    pub confusions: &'a [(FlightSpec, ConfusionMatrix)],
    pub histograms: &'a [ColorHistogram],
    pub mean_colors: &'a [([f64; 3], AttackStage)],
    /// Strategy name paired with its embedding.
    pub embeddings: &'a [(String, Embedding2D)],
}

/// Write every artifact under `out_dir`; returns the created files.
pub fn render_outputs(inputs: &RenderInputs, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::Data(format!("creating {}: {e}", out_dir.display())))?;
    let mut written = Vec::new();
    let emit = |path: PathBuf, contents: String, written: &mut Vec<PathBuf>| -> Result<()> {
        write_file(&path, &contents)?;
        written.push(path);
        Ok(())
    };

    if let Some(report) = inputs.accuracy {
        emit(
            out_dir.join("metrics/accuracy.csv"),
            accuracy_csv(report),
            &mut written,
        )?;
    }
    for (flight, matrix) in inputs.confusions {
        emit(
            out_dir.join(format!("metrics/confusion_{}.csv", flight.name())),
            confusion_csv(matrix),
            &mut written,
        )?;
        emit(
            out_dir.join(format!("plots/confusion_{}.svg", flight.name())),
            confusion_svg(matrix, &format!("Confusion: {}", flight.name())),
            &mut written,
        )?;
    }
    for hist in inputs.histograms {
        emit(
            out_dir.join(format!(
                "plots/histogram_{}.svg",
                hist.stage.name().to_lowercase()
            )),
            histogram_svg(hist),
            &mut written,
        )?;
    }
    if !inputs.mean_colors.is_empty() {
        // Project mean RGB onto the (R, G) plane for the scatter.
        let points: Vec<([f64; 2], AttackStage)> = inputs
            .mean_colors
            .iter()
            .map(|(rgb, stage)| ([rgb[0], rgb[1]], *stage))
            .collect();
        emit(
            out_dir.join("plots/mean_color.svg"),
            scatter_svg(&points, "Mean crown color (R vs G)"),
            &mut written,
        )?;
        let mut csv = String::from("r,g,b,label\n");
        for (rgb, stage) in inputs.mean_colors {
            let _ = writeln!(csv, "{:.4},{:.4},{:.4},{}", rgb[0], rgb[1], rgb[2], stage.name());
        }
        emit(out_dir.join("metrics/mean_color.csv"), csv, &mut written)?;
    }
    for (strategy, embedding) in inputs.embeddings {
        emit(
            out_dir.join(format!("tsne/{strategy}.csv")),
            embedding_csv(embedding)?,
            &mut written,
        )?;
        let points: Vec<([f64; 2], AttackStage)> = embedding
            .points
            .iter()
            .zip(&embedding.labels)
            .map(|(p, l)| (*p, *l))
            .collect();
        emit(
            out_dir.join(format!("plots/tsne_{strategy}.svg")),
            scatter_svg(&points, &format!("t-SNE: {strategy}")),
            &mut written,
        )?;
    }
    Ok(written)
}
