//! Per-flight training: AdamW, focal loss, validation-driven early stopping.

use crate::data::{normalize, resize_patch, CrownPatch, DatasetSplit, NormalizationStats};
use crate::error::{Error, Result};
use crate::network::loss::{focal_loss_with_grad, FocalLossParams};
use crate::network::model::{Network, NetworkConfig};
use crate::network::params::{Gradients, ParameterStore};
use crate::network::predict_batch;
use crate::rng::seeded_rng;
use indexmap::IndexMap;
use ndarray::Array4;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Optimizer and loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub early_stop_patience: usize,
    pub focal: FocalLossParams,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 2,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            early_stop_patience: 10,
            focal: FocalLossParams::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {beta}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        self.focal.validate()
    }
}

/// First/second AdamW moments, kept in f64 and keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct AdamWState {
    m: IndexMap<String, Vec<f64>>,
    v: IndexMap<String, Vec<f64>>,
    /// Completed step count; bias correction uses t starting at 1.
    pub t: u64,
}

impl AdamWState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One decoupled-weight-decay Adam step over every trainable parameter with
/// a gradient. Decay shrinks the parameter before the moment-based update.
pub fn adamw_step(
    store: &mut ParameterStore,
    grads: &Gradients,
    state: &mut AdamWState,
    config: &TrainConfig,
) -> Result<()> {
    config.validate()?;
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let names: Vec<String> = store.names().map(|s| s.to_string()).collect();
    for name in &names {
        let param = store.get_mut(name).unwrap();
        if !param.trainable {
            continue;
        }
        let grad = match grads.get(name) {
            Some(g) => g,
            None => continue,
        };
        if grad.shape() != param.shape.as_slice() {
            return Err(Error::ShapeMismatch {
                name: name.clone(),
                expected: param.shape.clone(),
                actual: grad.shape().to_vec(),
            });
        }
        let n = param.data.len();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let g = grad.as_slice().expect("gradients are contiguous");
        let decay = 1.0 - config.learning_rate * config.weight_decay;
        for i in 0..n {
            let mut theta = param.data[i] as f64 * decay;
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
            param.data[i] = theta as f32;
        }
    }
    Ok(())
}

/// Whether training should continue after a validation measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EarlyStopDecision {
    Continue,
    Stop,
}

/// Tracks the best validation metric and its parameter snapshot.
#[derive(Debug, Clone)]
pub struct EarlyStopState {
    pub best_metric: f64,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub best_parameters: Option<ParameterStore>,
    patience: usize,
}

const IMPROVEMENT_MARGIN: f64 = 1e-6;

impl EarlyStopState {
    pub fn new(patience: usize) -> Self {
        EarlyStopState {
            best_metric: f64::INFINITY,
            best_epoch: 0,
            epochs_since_improvement: 0,
            best_parameters: None,
            patience,
        }
    }
}

/// Record one epoch's validation loss. Improvement means strictly beating
/// the best by more than 1e-6; the counter resets on improvement and
/// training stops once it exceeds the patience.
pub fn early_stop_update(
    state: &mut EarlyStopState,
    epoch: usize,
    val_loss: f64,
    params: &ParameterStore,
) -> Result<EarlyStopDecision> {
    if !val_loss.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite validation loss {val_loss} at epoch {epoch}"
        )));
    }
    if val_loss < state.best_metric - IMPROVEMENT_MARGIN {
        state.best_metric = val_loss;
        state.best_epoch = epoch;
        state.epochs_since_improvement = 0;
        state.best_parameters = Some(params.clone());
        return Ok(EarlyStopDecision::Continue);
    }
    state.epochs_since_improvement += 1;
    if state.epochs_since_improvement > state.patience {
        Ok(EarlyStopDecision::Stop)
    } else {
        Ok(EarlyStopDecision::Continue)
    }
}

/// Per-run record of losses, accuracy, and settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub wall_time_secs: f64,
    pub config: TrainConfig,
    pub seed: u64,
}

/// Resize, normalize, and stack patches into an (N,3,S,S) network input.
pub fn batch_tensor(
    patches: &[&CrownPatch],
    side: usize,
    stats: &NormalizationStats,
) -> Array4<f64> {
    let mut out = Array4::zeros((patches.len(), 3, side, side));
    for (i, patch) in patches.iter().enumerate() {
        let resized = resize_patch(patch, side);
        let norm = normalize(&resized, stats);
        for y in 0..side {
            for x in 0..side {
                for c in 0..3 {
                    out[[i, c, y, x]] = norm[[y, x, c]];
                }
            }
        }
    }
    out
}

fn eval_loss_and_accuracy(
    net: &Network,
    store: &ParameterStore,
    patches: &[CrownPatch],
    stats: &NormalizationStats,
    config: &TrainConfig,
) -> Result<(f64, f64)> {
    let side = net.config().input_side;
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for chunk in patches.chunks(config.batch_size) {
        let refs: Vec<&CrownPatch> = chunk.iter().collect();
        let x = batch_tensor(&refs, side, stats);
        let targets: Vec<usize> = chunk.iter().map(|p| p.stage.ordinal()).collect();
        let pass = net.forward(store, &x)?;
        let logits = pass.logits();
        let (loss, _) = focal_loss_with_grad(&logits, &targets, &config.focal)?;
        total_loss += loss * chunk.len() as f64;
        for (pred, patch) in predict_batch(&logits).iter().zip(chunk) {
            if *pred == patch.stage {
                correct += 1;
            }
        }
    }
    let n = patches.len() as f64;
    Ok((total_loss / n, correct as f64 / n))
}

/// Train one flight's model. Returns the best-validation parameter snapshot
/// and a full report; aborts with a numeric error if the loss diverges.
pub fn train_flight_model(
    split: &DatasetSplit,
    net_config: &NetworkConfig,
    train_config: &TrainConfig,
    stats: &NormalizationStats,
) -> Result<(ParameterStore, TrainReport)> {
    train_flight_model_from(split, net_config, train_config, stats, None)
}

/// [`train_flight_model`] with an optional pre-initialized parameter store
/// (e.g. loaded from a checkpoint); `None` uses the seeded fresh init.
pub fn train_flight_model_from(
    split: &DatasetSplit,
    net_config: &NetworkConfig,
    train_config: &TrainConfig,
    stats: &NormalizationStats,
    init: Option<ParameterStore>,
) -> Result<(ParameterStore, TrainReport)> {
    net_config.validate()?;
    train_config.validate()?;
    if split.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if split.val.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }
    let started = Instant::now();
    let net = Network::new(net_config.clone())?;
    let mut store = match init {
        Some(store) => store,
        None => net.init_params(train_config.seed)?,
    };
    let mut adamw = AdamWState::new();
    let mut early = EarlyStopState::new(train_config.early_stop_patience);
    let side = net_config.input_side;

    let mut train_loss = Vec::new();
    let mut val_loss_series = Vec::new();
    let mut val_acc_series = Vec::new();
    let mut stopped_epoch = 0;

    for epoch in 1..=train_config.epochs {
        let mut order: Vec<usize> = (0..split.train.len()).collect();
        let mut rng = seeded_rng(train_config.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch_ids in order.chunks(train_config.batch_size) {
            let refs: Vec<&CrownPatch> = batch_ids.iter().map(|&i| &split.train[i]).collect();
            let x = batch_tensor(&refs, side, stats);
            let targets: Vec<usize> = refs.iter().map(|p| p.stage.ordinal()).collect();
            let pass = net.forward(&store, &x)?;
            let logits = pass.logits();
            let (loss, grad_logits) = focal_loss_with_grad(&logits, &targets, &train_config.focal)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training loss diverged at epoch {epoch} (loss = {loss})"
                )));
            }
            epoch_loss += loss * refs.len() as f64;
            let grads = pass.backward(&grad_logits);
            adamw_step(&mut store, &grads, &mut adamw, train_config)?;
        }
        train_loss.push(epoch_loss / split.train.len() as f64);

        let (val_loss, val_acc) =
            eval_loss_and_accuracy(&net, &store, &split.val, stats, train_config)?;
        val_loss_series.push(val_loss);
        val_acc_series.push(val_acc);
        stopped_epoch = epoch;
        if early_stop_update(&mut early, epoch, val_loss, &store)? == EarlyStopDecision::Stop {
            break;
        }
    }

    let best = early.best_parameters.take().unwrap_or(store);
    let report = TrainReport {
        train_loss,
        val_loss: val_loss_series,
        val_accuracy: val_acc_series,
        stopped_epoch,
        best_epoch: early.best_epoch,
        best_val_loss: early.best_metric,
        wall_time_secs: started.elapsed().as_secs_f64(),
        config: train_config.clone(),
        seed: train_config.seed,
    };
    Ok((best, report))
}
