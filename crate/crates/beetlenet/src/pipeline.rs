//! Command implementations behind the CLI: prepare, augment, train, eval,
//! baselines, visualize, and the end-to-end reproduce run.

use crate::augment::{balance_dataset, AugmentationStrategy};
use crate::baselines::{featurize, grid_search, BaselineKind, GridPoint, TrainedBaseline};
use crate::config::RunConfig;
use crate::data::{
    compute_normalization, extract_patch, parse_annotations, stratified_split, CrownPatch,
    DatasetSplit,
};
use crate::error::{Error, Result};
use crate::eval::render::{render_outputs, RenderInputs};
use crate::eval::{
    average_accuracy, confusion_matrix, fixture::write_fixture_dataset, mean_color_scatter,
    rgb_histograms, tsne_embed, AccuracyReport, ConfusionMatrix,
};
use crate::network::checkpoint::{export_checkpoint, import_checkpoint};
use crate::network::model::Network;
use crate::network::predict_batch;
use crate::stage::{AttackStage, FlightSpec};
use crate::train::{batch_tensor, train_flight_model_from};
use ndarray::Array3;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Write the fully resolved configuration next to the command's outputs.
fn echo_config(config: &RunConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.resolved.toml"), config.to_toml()?)?;
    Ok(())
}

fn load_raster(path: &Path) -> Result<Array3<u8>> {
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("reading {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Array3::from_shape_fn(
        (h as usize, w as usize, 3),
        |(y, x, c)| img.get_pixel(x as u32, y as u32)[c],
    ))
}

fn save_patch_png(patch: &CrownPatch, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let side = patch.side() as u32;
    let mut img = image::RgbImage::new(side, side);
    for y in 0..patch.side() {
        for x in 0..patch.side() {
            img.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([
                    patch.pixels[[y, x, 0]],
                    patch.pixels[[y, x, 1]],
                    patch.pixels[[y, x, 2]],
                ]),
            );
        }
    }
    img.save(path)
        .map_err(|e| Error::Data(format!("writing {}: {e}", path.display())))
}

fn load_patch_png(
    path: &Path,
    stage: AttackStage,
    flight: FlightSpec,
    tree_id: &str,
) -> Result<CrownPatch> {
    let pixels = load_raster(path)?;
    let mut patch = CrownPatch::new(pixels, stage, flight, tree_id)?;
    patch.synthetic = tree_id.starts_with("syn-");
    Ok(patch)
}

/// One row of the prepared-patch manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
struct ManifestRow {
    flight: FlightSpec,
    tree_id: String,
    stage: AttackStage,
    split: String,
    path: PathBuf,
}

fn read_manifest(path: &Path, columns: usize) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("reading {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if fields.len() != columns {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {columns} fields, got {}", fields.len()),
            });
        }
        rows.push(fields);
    }
    Ok(rows)
}

fn read_prepared_manifest(out_dir: &Path) -> Result<Vec<ManifestRow>> {
    let path = out_dir.join("prepared/manifest.csv");
    read_manifest(&path, 5)?
        .into_iter()
        .map(|f| {
            Ok(ManifestRow {
                flight: f[0].parse()?,
                tree_id: f[1].clone(),
                stage: f[2].parse()?,
                split: f[3].clone(),
                path: out_dir.join(&f[4]),
            })
        })
        .collect()
}

fn load_split(out_dir: &Path, flight: FlightSpec, seed: u64) -> Result<DatasetSplit> {
    let rows = read_prepared_manifest(out_dir)?;
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for row in rows.iter().filter(|r| r.flight == flight) {
        let patch = load_patch_png(&row.path, row.stage, row.flight, &row.tree_id)?;
        match row.split.as_str() {
            "train" => split.train.push(patch),
            "val" => split.val.push(patch),
            "test" => split.test.push(patch),
            other => {
                return Err(Error::Data(format!("unknown split tag `{other}`")))
            }
        }
    }
    if split.train.is_empty() && split.val.is_empty() && split.test.is_empty() {
        return Err(Error::Data(format!(
            "no prepared patches for flight {flight}; run `prepare` first"
        )));
    }
    Ok(split)
}

/// Augmented synthetic patches for one flight, if the augment step ran.
fn load_augmented(out_dir: &Path, flight: FlightSpec) -> Result<Vec<CrownPatch>> {
    let path = out_dir.join("augmented/manifest.csv");
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_manifest(&path, 7)?
        .into_iter()
        .filter(|f| f[0] == flight.name())
        .map(|f| {
            let stage: AttackStage = f[2].parse()?;
            load_patch_png(&out_dir.join(&f[6]), stage, flight, &f[1])
        })
        .collect()
}

/// Per-flight class counts produced by `prepare`.
#[derive(Debug, Clone, Serialize)]
pub struct PrepareSummary {
    pub per_flight: BTreeMap<String, [usize; 3]>, // [train, val, test]
}

/// Extract crown patches from every configured orthomosaic, split them, and
/// write the patch archive plus manifest.
pub fn cmd_prepare(config: &RunConfig) -> Result<PrepareSummary> {
    let seed = config.require_seed()?;
    let out_dir = config.require_out_dir()?.to_path_buf();
    config.validate_inputs()?;
    echo_config(config, &out_dir)?;
    let annotations_text = std::fs::read_to_string(&config.paths.annotations)?;
    let annotations = parse_annotations(&annotations_text)?;

    let mut manifest = String::from("flight,tree_id,stage,split,path\n");
    let mut summary = PrepareSummary {
        per_flight: BTreeMap::new(),
    };
    for (flight, raster_path) in config.flights()? {
        let raster = load_raster(&raster_path)?;
        let patches: Vec<CrownPatch> = annotations
            .iter()
            .filter(|a| a.flight == flight)
            .map(|a| extract_patch(&raster, a, config.patch_side()))
            .collect::<Result<_>>()?;
        if patches.is_empty() {
            return Err(Error::Data(format!(
                "no annotations for flight {flight} in {}",
                config.paths.annotations.display()
            )));
        }
        let counts = config.split.for_flight(flight);
        let split = stratified_split(&patches, counts.val, counts.test, seed)?;
        summary.per_flight.insert(
            flight.name().to_string(),
            [split.train.len(), split.val.len(), split.test.len()],
        );
        for (tag, patches) in [
            ("train", &split.train),
            ("val", &split.val),
            ("test", &split.test),
        ] {
            for patch in patches {
                let rel = format!("prepared/{}/{}.png", flight.name(), patch.tree_id);
                save_patch_png(patch, &out_dir.join(&rel))?;
                manifest.push_str(&format!(
                    "{},{},{},{tag},{rel}\n",
                    flight.name(),
                    patch.tree_id,
                    patch.stage.name()
                ));
            }
        }
    }
    std::fs::write(out_dir.join("prepared/manifest.csv"), manifest)?;
    Ok(summary)
}

/// Augmented-set counts per flight.
#[derive(Debug, Clone, Serialize)]
pub struct AugmentSummary {
    pub strategy: String,
    pub per_flight: BTreeMap<String, usize>,
    pub notice: Option<String>,
}

/// Balance each flight's training set to its majority class and archive the
/// synthetic patches.
pub fn cmd_augment(config: &RunConfig) -> Result<AugmentSummary> {
    let seed = config.require_seed()?;
    let out_dir = config.require_out_dir()?.to_path_buf();
    echo_config(config, &out_dir)?;
    let strategy = config.augmentation.strategy;
    let mut summary = AugmentSummary {
        strategy: strategy.name().to_string(),
        per_flight: BTreeMap::new(),
        notice: None,
    };
    let mut manifest = String::from("flight,tree_id,stage,source_tree_id,strategy,seed,path\n");
    for (flight, _) in config.flights()? {
        let split = load_split(&out_dir, flight, seed)?;
        if strategy == AugmentationStrategy::None {
            summary
                .per_flight
                .insert(flight.name().to_string(), split.train.len());
            continue;
        }
        let (balanced, records) =
            balance_dataset(&split.train, strategy, &config.augmentation.params, seed)?;
        let synthetic: Vec<&CrownPatch> = balanced.iter().filter(|p| p.synthetic).collect();
        for (patch, record) in synthetic.iter().zip(&records) {
            let rel = format!("augmented/{}/{}.png", flight.name(), patch.tree_id);
            save_patch_png(patch, &out_dir.join(&rel))?;
            manifest.push_str(&format!(
                "{},{},{},{},{},{},{rel}\n",
                flight.name(),
                record.tree_id,
                patch.stage.name(),
                record.source_tree_id,
                record.strategy,
                record.seed
            ));
        }
        summary
            .per_flight
            .insert(flight.name().to_string(), balanced.len());
    }
    if strategy == AugmentationStrategy::None {
        summary.notice =
            Some("augmentation strategy is None: training sets left unbalanced".to_string());
        return Ok(summary);
    }
    std::fs::create_dir_all(out_dir.join("augmented"))?;
    std::fs::write(out_dir.join("augmented/manifest.csv"), manifest)?;
    Ok(summary)
}

/// Per-flight training outcome.
#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub per_flight: BTreeMap<String, f64>, // best validation loss
}

/// Train one model per flight (in parallel), saving a checkpoint and a JSON
/// report each.
pub fn cmd_train(config: &RunConfig) -> Result<TrainSummary> {
    let seed = config.require_seed()?;
    let out_dir = config.require_out_dir()?.to_path_buf();
    echo_config(config, &out_dir)?;
    config.network.validate()?;
    let mut train_config = config.train.clone();
    train_config.seed = seed;
    std::fs::create_dir_all(out_dir.join("checkpoints"))?;
    std::fs::create_dir_all(out_dir.join("reports"))?;

    let flights = config.flights()?;
    let results: Vec<(FlightSpec, f64)> = flights
        .par_iter()
        .map(|(flight, _)| {
            let mut split = load_split(&out_dir, *flight, seed)?;
            let augmented = load_augmented(&out_dir, *flight)?;
            split.train.extend(augmented);
            let stats = compute_normalization(&split.train)?;
            let init = match &config.paths.init_checkpoint {
                Some(path) => {
                    let net = Network::new(config.network.clone())?;
                    let mut store = net.init_params(seed)?;
                    import_checkpoint(&mut store, path)?;
                    Some(store)
                }
                None => None,
            };
            let (params, report) =
                train_flight_model_from(&split, &config.network, &train_config, &stats, init)?;
            export_checkpoint(&params, &out_dir.join(format!("checkpoints/{flight}.ckpt")))?;
            // Persist normalization stats alongside so eval matches training.
            std::fs::write(
                out_dir.join(format!("reports/stats_{flight}.json")),
                serde_json::to_string_pretty(&stats).map_err(|e| Error::Data(e.to_string()))?,
            )?;
            std::fs::write(
                out_dir.join(format!("reports/train_{flight}.json")),
                serde_json::to_string_pretty(&report).map_err(|e| Error::Data(e.to_string()))?,
            )?;
            Ok((*flight, report.best_val_loss))
        })
        .collect::<Result<_>>()?;
    let mut summary = TrainSummary {
        per_flight: BTreeMap::new(),
    };
    for (flight, loss) in results {
        summary.per_flight.insert(flight.name().to_string(), loss);
    }
    Ok(summary)
}

fn predict_test_set(
    config: &RunConfig,
    out_dir: &Path,
    flight: FlightSpec,
    seed: u64,
) -> Result<ConfusionMatrix> {
    let ckpt_path = out_dir.join(format!("checkpoints/{flight}.ckpt"));
    if !ckpt_path.exists() {
        return Err(Error::Data(format!(
            "checkpoint for {flight} not found at {}; run `train` first",
            ckpt_path.display()
        )));
    }
    let net = Network::new(config.network.clone())?;
    let mut params = net.init_params(seed)?;
    import_checkpoint(&mut params, &ckpt_path)?;
    let stats_path = out_dir.join(format!("reports/stats_{flight}.json"));
    let stats: crate::data::NormalizationStats = serde_json::from_str(
        &std::fs::read_to_string(&stats_path)
            .map_err(|e| Error::Data(format!("reading {}: {e}", stats_path.display())))?,
    )
    .map_err(|e| Error::Data(format!("{}: {e}", stats_path.display())))?;
    let split = load_split(out_dir, flight, seed)?;
    let mut predictions = Vec::new();
    let mut truths = Vec::new();
    for chunk in split.test.chunks(8) {
        let refs: Vec<&CrownPatch> = chunk.iter().collect();
        let x = batch_tensor(&refs, config.network.input_side, &stats);
        let pass = net.forward(&params, &x)?;
        predictions.extend(predict_batch(&pass.logits()));
        truths.extend(chunk.iter().map(|p| p.stage));
    }
    confusion_matrix(&predictions, &truths)
}

/// Evaluate every flight's checkpoint on its test split and write the
/// accuracy table plus confusion artifacts.
pub fn cmd_eval(config: &RunConfig) -> Result<AccuracyReport> {
    let seed = config.require_seed()?;
    let out_dir = config.require_out_dir()?.to_path_buf();
    echo_config(config, &out_dir)?;
    let flights = config.flights()?;
    let matrices: Vec<(FlightSpec, ConfusionMatrix)> = flights
        .par_iter()
        .map(|(flight, _)| Ok((*flight, predict_test_set(config, &out_dir, *flight, seed)?)))
        .collect::<Result<_>>()?;
    let report = average_accuracy(&matrices)?;
    let inputs = RenderInputs {
        accuracy: Some(&report),
        confusions: &matrices,
        ..Default::default()
    };
    render_outputs(&inputs, &out_dir)?;
    Ok(report)
}

/// Per-classifier grid outcome, including the held-out test accuracy of the
/// validation winner.
#[derive(Debug, Clone, Serialize)]
pub struct BaselineSummary {
    pub classifier: String,
    pub best_params: String,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

/// Grid-search KNN, SVM, and random forest on pooled raw-pixel features.
pub fn cmd_baselines(config: &RunConfig) -> Result<Vec<BaselineSummary>> {
    let seed = config.require_seed()?;
    let out_dir = config.require_out_dir()?.to_path_buf();
    echo_config(config, &out_dir)?;
    std::fs::create_dir_all(out_dir.join("baselines"))?;

    // Pool all flights: the baselines see the dataset as one table.
    let mut sets: [(Vec<Vec<f64>>, Vec<AttackStage>); 3] =
        [(Vec::new(), Vec::new()), (Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
    for (flight, _) in config.flights()? {
        let split = load_split(&out_dir, flight, seed)?;
        for (i, patches) in [&split.train, &split.val, &split.test].into_iter().enumerate() {
            for patch in patches {
                sets[i].0.push(featurize(patch, config.feature_side())?);
                sets[i].1.push(patch.stage);
            }
        }
    }
    let [(train_x, train_y), (val_x, val_y), (test_x, test_y)] = sets;

    let mut summaries = Vec::new();
    for kind in [BaselineKind::Knn, BaselineKind::Svm, BaselineKind::RandomForest] {
        let outcome = grid_search(
            kind,
            &config.baselines,
            &train_x,
            &train_y,
            &val_x,
            &val_y,
            seed,
        )?;
        // Refit the winner and evaluate once on test.
        let points = crate::baselines::enumerate_grid(kind, &config.baselines);
        let best_point: &GridPoint = &points[outcome.best_index];
        let model: TrainedBaseline = crate::baselines::fit_point(best_point, &train_x, &train_y, seed)?;
        let test_accuracy = model.accuracy(&test_x, &test_y)?;

        let mut csv = String::from("classifier,params,val_accuracy,test_accuracy\n");
        for (i, row) in outcome.table.iter().enumerate() {
            let test_col = if i == outcome.best_index {
                format!("{test_accuracy:.6}")
            } else {
                String::new()
            };
            csv.push_str(&format!(
                "{},{},{:.6},{test_col}\n",
                kind.name(),
                row.params,
                row.val_accuracy
            ));
        }
        std::fs::write(out_dir.join(format!("baselines/{}.csv", kind.name())), csv)?;
        summaries.push(BaselineSummary {
            classifier: kind.name().to_string(),
            best_params: outcome.best_params,
            val_accuracy: outcome.best_val_accuracy,
            test_accuracy,
        });
    }
    Ok(summaries)
}

/// Deterministic per-class subsample down to `max_points` total.
fn subsample(patches: Vec<CrownPatch>, max_points: usize) -> Vec<CrownPatch> {
    if patches.len() <= max_points {
        return patches;
    }
    let stride = patches.len().div_ceil(max_points);
    patches.into_iter().step_by(stride).collect()
}

/// Color-space scatter, per-class histograms, and per-strategy t-SNE.
pub fn cmd_visualize(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let seed = config.require_seed()?;
    let out_dir = config.require_out_dir()?.to_path_buf();
    echo_config(config, &out_dir)?;

    let mut train_all = Vec::new();
    for (flight, _) in config.flights()? {
        let split = load_split(&out_dir, flight, seed)?;
        train_all.extend(split.train);
    }
    if train_all.is_empty() {
        return Err(Error::Data("no training patches to visualize".into()));
    }
    for stage in AttackStage::ALL {
        if !train_all.iter().any(|p| p.stage == stage) {
            return Err(Error::Data(format!(
                "class {} has no training samples to visualize",
                stage.name()
            )));
        }
    }
    let histograms = rgb_histograms(&train_all)?;
    let mean_colors = mean_color_scatter(&train_all);

    let embeddings: Vec<(String, crate::eval::Embedding2D)> = config
        .visualize
        .strategies
        .par_iter()
        .map(|&strategy| {
            let pool = if strategy == AugmentationStrategy::None {
                train_all.clone()
            } else {
                balance_dataset(&train_all, strategy, &config.augmentation.params, seed)?.0
            };
            let pool = subsample(pool, config.visualize.max_points);
            let features: Vec<Vec<f64>> = pool
                .iter()
                .map(|p| featurize(p, config.feature_side()))
                .collect::<Result<_>>()?;
            let labels: Vec<AttackStage> = pool.iter().map(|p| p.stage).collect();
            let mut params = config.visualize.tsne.clone();
            params.seed = seed;
            // Shrink the perplexity if the pool is small.
            let max_perplexity = ((features.len() as f64 - 1.0) / 3.1).floor();
            params.perplexity = params.perplexity.min(max_perplexity).max(2.0);
            let embedding = tsne_embed(&features, &params)?.with_labels(labels)?;
            Ok((strategy.name().to_string(), embedding))
        })
        .collect::<Result<_>>()?;

    let inputs = RenderInputs {
        accuracy: None,
        confusions: &[],
        histograms: &histograms,
        mean_colors: &mean_colors,
        embeddings: &embeddings,
    };
    render_outputs(&inputs, &out_dir)
}

/// Render the synthetic fixture dataset (orthomosaics + annotations) into
/// the configured annotations/orthomosaic paths' directory.
pub fn cmd_fixture(config: &RunConfig, dir: &Path) -> Result<PathBuf> {
    let mut spec = config.fixture.clone();
    spec.seed = config.require_seed()?;
    if spec.side == 0 {
        spec.side = config.patch_side();
    }
    let flights: Vec<FlightSpec> = if config.paths.orthomosaics.is_empty() {
        FlightSpec::ALL.to_vec()
    } else {
        config.flights()?.into_iter().map(|(f, _)| f).collect()
    };
    let ds = write_fixture_dataset(&spec, &flights, dir)?;
    Ok(ds.annotations)
}

/// Headline numbers from a full reproduce run.
#[derive(Debug, Clone, Serialize)]
pub struct ReproduceSummary {
    pub seed: u64,
    pub version: String,
    pub prepare: PrepareSummary,
    pub augment: AugmentSummary,
    pub train: TrainSummary,
    pub accuracy: AccuracyReport,
    pub baselines: Vec<BaselineSummary>,
}

/// prepare -> augment -> train -> eval -> baselines -> visualize, one seed.
pub fn cmd_reproduce(config: &RunConfig) -> Result<ReproduceSummary> {
    let seed = config.require_seed()?;
    let out_dir = config.require_out_dir()?.to_path_buf();
    let prepare = cmd_prepare(config)?;
    let augment = cmd_augment(config)?;
    let train = cmd_train(config)?;
    let accuracy = cmd_eval(config)?;
    let baselines = cmd_baselines(config)?;
    cmd_visualize(config)?;
    let summary = ReproduceSummary {
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        prepare,
        augment,
        train,
        accuracy,
        baselines,
    };
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Data(e.to_string()))?,
    )?;
    Ok(summary)
}
