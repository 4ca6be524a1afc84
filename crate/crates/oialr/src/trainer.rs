//! The adaptive low-rank training loop and its full-rank baseline twin.
//!
//! Steps are 1-based and occupy exactly one of three branches: before the
//! delay the network trains full-rank; at the delay step it converts to
//! the factored form; afterwards, steps on the update cadence refresh
//! bases and truncate ranks for the last `ell` eligible layers while every
//! other step trains the square factors. Event steps take no gradient
//! step. The baseline runs the same loop with events disabled, which is
//! what makes the degenerate-delay equivalence exact.

use crate::data::{Batch, Dataset, Targets};
use crate::error::{Error, Result};
use crate::metrics::{
    compare_snapshots, take_snapshot, SnapshotHistory, StabilityNorm,
};
use crate::nn::loss::{accuracy, cross_entropy_loss, mse_loss};
use crate::nn::{DenseLayer, LayerMode, SequentialModel, WeightGrad};
use crate::optim::{AdamW, AdamWConfig, LrSchedule, RankChangeMode};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Conversion step. `None` means one third of the total steps. A value
    /// equal to the total step count never converts, making the run an
    /// exact baseline.
    pub delay: Option<usize>,
    /// Steps between basis updates after conversion. `None` means once per
    /// epoch.
    pub update_every: Option<usize>,
    pub beta: f64,
    pub alpha: f64,
    pub exclude_first_layer: bool,
    pub exclude_last_layer: bool,
    pub start_low_rank: bool,
    pub seed: u64,
    pub schedule: LrSchedule,
    pub adamw: AdamWConfig,
    pub rank_change_mode: RankChangeMode,
    pub stability_norm: StabilityNorm,
    /// Epochs between snapshot comparisons.
    pub snapshot_lag: usize,
    /// Epochs between snapshots.
    pub stability_every: usize,
    pub label_smoothing: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            batch_size: 32,
            delay: None,
            update_every: None,
            beta: 0.1,
            alpha: 0.1,
            exclude_first_layer: false,
            exclude_last_layer: false,
            start_low_rank: false,
            seed: 0,
            schedule: LrSchedule {
                base_lr: 0.001,
                min_lr: 0.00001,
                warmup_lr: 0.00001,
                warmup_epochs: 10,
                total_epochs: 1,
                k_decay: 1.0,
            },
            adamw: AdamWConfig::default(),
            rank_change_mode: RankChangeMode::Reset,
            stability_norm: StabilityNorm::MinRank,
            snapshot_lag: 5,
            stability_every: 1,
            label_smoothing: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainEvent {
    Converted {
        step: usize,
    },
    BasisUpdate {
        step: usize,
        update_index: usize,
        ell: usize,
        layers: Vec<usize>,
        ranks_before: Vec<usize>,
        ranks_after: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRow {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub train_metric: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    pub lr: f64,
    pub trainable_params: usize,
    pub total_params: usize,
    pub compression_pct: f64,
    pub trainable_pct: f64,
    pub mean_stability: Option<f64>,
    pub mean_similarity: Option<f64>,
    pub rank_per_layer: Vec<usize>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: SequentialModel,
    pub optimizer: AdamW,
    pub telemetry: Vec<TelemetryRow>,
    pub events: Vec<TrainEvent>,
}

/// Adaptive low-rank training per the configured delay/cadence.
pub fn train(
    model: SequentialModel,
    cfg: &TrainConfig,
    data: &Dataset,
    observer: &mut dyn FnMut(usize, &SequentialModel, &AdamW, &TelemetryRow) -> Result<()>,
) -> Result<TrainOutcome> {
    run_loop(model, cfg, data, true, observer)
}

/// Full-rank baseline: identical loop, schedule, optimizer, and telemetry,
/// with conversion and basis updates disabled.
pub fn train_baseline(
    model: SequentialModel,
    cfg: &TrainConfig,
    data: &Dataset,
    observer: &mut dyn FnMut(usize, &SequentialModel, &AdamW, &TelemetryRow) -> Result<()>,
) -> Result<TrainOutcome> {
    run_loop(model, cfg, data, false, observer)
}

/// The last `ell` factorized layers in network order; input-side layers
/// stay out the longest.
pub fn layer_update_order(model: &SequentialModel, ell: usize) -> Vec<usize> {
    let ids = model.low_rank_layer_ids();
    let skip = ids.len().saturating_sub(ell);
    ids[skip..].to_vec()
}

/// Percentages relative to a full-rank reference: total parameters
/// (frozen bases included) and trainable parameters. Values above 100 mean
/// the factored form costs more than the dense one.
pub fn compression_report(
    model: &SequentialModel,
    baseline_trainable: usize,
    baseline_total: usize,
) -> Result<(f64, f64)> {
    if baseline_trainable == 0 || baseline_total == 0 {
        return Err(Error::Config(
            "baseline parameter count is zero".into(),
        ));
    }
    let (trainable, total) = model.param_counts();
    Ok((
        100.0 * total as f64 / baseline_total as f64,
        100.0 * trainable as f64 / baseline_trainable as f64,
    ))
}

fn validate(cfg: &TrainConfig, data: &Dataset, t_max: usize, d: usize, nu: usize) -> Result<()> {
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be >= 1".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    if !(cfg.beta > 0.0 && cfg.beta < 1.0) {
        return Err(Error::Config(format!(
            "beta must lie in (0, 1), got {}",
            cfg.beta
        )));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha <= 1.0) {
        return Err(Error::Config(format!(
            "alpha must lie in (0, 1], got {}",
            cfg.alpha
        )));
    }
    if d == 0 {
        return Err(Error::Config(
            "delay 0 is ambiguous; set start_low_rank for immediate conversion".into(),
        ));
    }
    if d > t_max {
        return Err(Error::Config(format!(
            "delay {d} exceeds the total step count {t_max}"
        )));
    }
    if nu == 0 {
        return Err(Error::Config("update frequency must be >= 1".into()));
    }
    if cfg.snapshot_lag == 0 || cfg.stability_every == 0 {
        return Err(Error::Config(
            "snapshot lag and cadence must be >= 1".into(),
        ));
    }
    if !(0.0..1.0).contains(&cfg.label_smoothing) {
        return Err(Error::Config(format!(
            "label smoothing must lie in [0, 1), got {}",
            cfg.label_smoothing
        )));
    }
    if data.train_count() == 0 {
        return Err(Error::Config("dataset has no training rows".into()));
    }
    if data.test_count() == 0 {
        return Err(Error::Config("dataset has no test rows".into()));
    }
    if cfg.schedule.total_epochs != cfg.epochs {
        return Err(Error::Config(format!(
            "schedule covers {} epochs but the run has {}",
            cfg.schedule.total_epochs, cfg.epochs
        )));
    }
    Ok(())
}

/// ceil(L * alpha * u) capped at L. The tiny nudge keeps float roundoff in
/// the product from bumping the ceiling a full layer up.
fn ell_for(update_index: usize, total_layers: usize, alpha: f64) -> usize {
    let raw = total_layers as f64 * alpha * update_index as f64;
    ((raw - 1e-9).ceil() as usize).min(total_layers)
}

fn run_loop(
    mut model: SequentialModel,
    cfg: &TrainConfig,
    data: &Dataset,
    events_enabled: bool,
    observer: &mut dyn FnMut(usize, &SequentialModel, &AdamW, &TelemetryRow) -> Result<()>,
) -> Result<TrainOutcome> {
    let steps_per_epoch = data.train_count().div_ceil(cfg.batch_size);
    let t_max = cfg.epochs * steps_per_epoch;
    let d = cfg.delay.unwrap_or_else(|| (t_max / 3).max(1));
    let nu = cfg.update_every.unwrap_or(steps_per_epoch);
    validate(cfg, data, t_max, d, nu)?;

    let (baseline_trainable, baseline_total) = model.param_counts();
    let mut optimizer = AdamW::new(cfg.adamw);
    let mut events = Vec::new();
    let mut telemetry = Vec::new();
    let mut history = SnapshotHistory::new(8.max(cfg.snapshot_lag + 1));

    let mut converted = false;
    let mut d_eff = d;
    if events_enabled && cfg.start_low_rank {
        model.convert_to_low_rank(cfg.exclude_first_layer, cfg.exclude_last_layer)?;
        converted = true;
        d_eff = 0;
        events.push(TrainEvent::Converted { step: 0 });
    }
    let total_layers = eligible_layer_count(&model, cfg);

    let mut t = 0usize;
    let mut update_index = 0usize;
    let mut prev_ell = 0usize;
    for epoch in 0..cfg.epochs {
        let order = data.shuffled_train_order(cfg.seed, epoch);
        let mut loss_sum = 0.0;
        let mut loss_batches = 0usize;
        let mut metric_weighted = 0.0;
        let mut metric_rows = 0usize;
        let mut last_lr = 0.0;
        for batch in data.batches(&order, cfg.batch_size) {
            let step_in_epoch = t - epoch * steps_per_epoch;
            t += 1;
            last_lr = cfg.schedule.lr_at(epoch, step_in_epoch, steps_per_epoch);

            if events_enabled && !converted && d < t_max && t == d {
                model.convert_to_low_rank(cfg.exclude_first_layer, cfg.exclude_last_layer)?;
                converted = true;
                events.push(TrainEvent::Converted { step: t });
                continue;
            }
            if events_enabled && converted && t > d_eff && t % nu == 0 {
                update_index += 1;
                let ell = ell_for(update_index, total_layers, cfg.alpha);
                debug_assert!(ell >= prev_ell && ell <= total_layers);
                prev_ell = ell;
                let layers = layer_update_order(&model, ell);
                let mut ranks_before = Vec::with_capacity(layers.len());
                let mut ranks_after = Vec::with_capacity(layers.len());
                for d_layer in model.dense_layers_mut() {
                    if !layers.contains(&d_layer.layer_id) {
                        continue;
                    }
                    let LayerMode::LowRank(w) = &mut d_layer.mode else {
                        return Err(Error::Internal(
                            "basis update scheduled on an unfactored layer".into(),
                        ));
                    };
                    let old_rank = w.rank();
                    w.update_basis()?;
                    let new_rank = w.truncate_rank(cfg.beta)?;
                    ranks_before.push(old_rank);
                    ranks_after.push(new_rank);
                    optimizer.apply_rank_change(
                        &format!("layer{}.sigma", d_layer.layer_id),
                        old_rank,
                        new_rank,
                        cfg.rank_change_mode,
                    );
                }
                events.push(TrainEvent::BasisUpdate {
                    step: t,
                    update_index,
                    ell,
                    layers,
                    ranks_before,
                    ranks_after,
                });
                continue;
            }

            let (loss, metric, rows) =
                gradient_step(&mut model, &mut optimizer, &batch, last_lr, cfg, t)?;
            loss_sum += loss;
            loss_batches += 1;
            metric_weighted += metric * rows as f64;
            metric_rows += rows;
        }

        let (val_loss, val_metric) = evaluate(&model, data, cfg)?;
        let (mut mean_stability, mut mean_similarity) = (None, None);
        if epoch % cfg.stability_every == 0 {
            let snap = take_snapshot(&model, epoch)?;
            if epoch >= cfg.snapshot_lag {
                if let Some(prev) = history.find(epoch - cfg.snapshot_lag) {
                    let records = compare_snapshots(prev, &snap, cfg.stability_norm)?;
                    if let Some(mean) = records.iter().find(|r| r.layer_id.is_none()) {
                        mean_stability = Some(mean.stability);
                        mean_similarity = Some(mean.similarity);
                    }
                }
            }
            history.push(snap);
        }
        let (trainable, total) = model.param_counts();
        let (compression_pct, trainable_pct) =
            compression_report(&model, baseline_trainable, baseline_total)?;
        let row = TelemetryRow {
            epoch,
            step: t,
            train_loss: if loss_batches > 0 {
                loss_sum / loss_batches as f64
            } else {
                f64::NAN
            },
            train_metric: if metric_rows > 0 {
                metric_weighted / metric_rows as f64
            } else {
                f64::NAN
            },
            val_loss,
            val_metric,
            lr: last_lr,
            trainable_params: trainable,
            total_params: total,
            compression_pct,
            trainable_pct,
            mean_stability,
            mean_similarity,
            rank_per_layer: rank_per_layer(&model),
        };
        observer(epoch, &model, &optimizer, &row)?;
        telemetry.push(row);
    }

    Ok(TrainOutcome {
        model,
        optimizer,
        telemetry,
        events,
    })
}

/// Count of layers the update schedule can ever touch.
fn eligible_layer_count(model: &SequentialModel, cfg: &TrainConfig) -> usize {
    let n = model.num_dense_layers();
    let mut count = 0;
    for d in model.dense_layers() {
        if cfg.exclude_first_layer && d.layer_id == 0 {
            continue;
        }
        if cfg.exclude_last_layer && d.layer_id == n - 1 {
            continue;
        }
        count += 1;
    }
    count
}

fn rank_per_layer(model: &SequentialModel) -> Vec<usize> {
    model
        .dense_layers()
        .map(|d| match &d.mode {
            LayerMode::Full(w) => w.rows().min(w.cols()),
            LayerMode::LowRank(w) => w.rank(),
        })
        .collect()
}

fn batch_loss(
    model: &SequentialModel,
    batch: &Batch,
    cfg: &TrainConfig,
    step: usize,
) -> Result<(f64, crate::linalg::Matrix, crate::nn::ForwardCache, f64)> {
    let (logits, cache) = model.forward(&batch.inputs)?;
    if !logits.all_finite() {
        return Err(Error::NonFiniteLoss { step: step as u64 });
    }
    let (loss, grad, metric) = match &batch.targets {
        Targets::Classes(targets) => {
            let (loss, grad) = cross_entropy_loss(&logits, targets, cfg.label_smoothing)?;
            let metric = accuracy(&logits, targets);
            (loss, grad, metric)
        }
        Targets::Values(targets) => {
            let (loss, grad) = mse_loss(&logits, targets)?;
            (loss, grad, loss)
        }
    };
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step: step as u64 });
    }
    Ok((loss, grad, cache, metric))
}

fn gradient_step(
    model: &mut SequentialModel,
    optimizer: &mut AdamW,
    batch: &Batch,
    lr: f64,
    cfg: &TrainConfig,
    step: usize,
) -> Result<(f64, f64, usize)> {
    let (loss, grad, cache, metric) = batch_loss(model, batch, cfg, step)?;
    let grads = model.backward(&cache, &grad)?;
    for (layer, g) in model.dense_layers_mut().zip(&grads) {
        apply_layer_grads(optimizer, layer, g, lr)?;
    }
    Ok((loss, metric, batch.inputs.rows()))
}

fn apply_layer_grads(
    optimizer: &mut AdamW,
    layer: &mut DenseLayer,
    grads: &crate::nn::LayerGrads,
    lr: f64,
) -> Result<()> {
    let id = layer.layer_id;
    match (&mut layer.mode, &grads.weight) {
        (LayerMode::Full(w), WeightGrad::Full(gw)) => {
            optimizer.step_tensor(&format!("layer{id}.weight"), w.data_mut(), gw.data(), lr, true)?;
        }
        (LayerMode::LowRank(w), WeightGrad::Sigma(gs)) => {
            optimizer.step_tensor(
                &format!("layer{id}.sigma"),
                w.sigma_mut().data_mut(),
                gs.data(),
                lr,
                true,
            )?;
        }
        _ => {
            return Err(Error::Internal(format!(
                "gradient kind does not match layer {id} mode"
            )))
        }
    }
    optimizer.step_tensor(
        &format!("layer{id}.bias"),
        &mut layer.bias,
        &grads.bias,
        lr,
        false,
    )?;
    Ok(())
}

/// Loss and metric over the test split, batched like training to bound
/// memory.
fn evaluate(model: &SequentialModel, data: &Dataset, cfg: &TrainConfig) -> Result<(f64, f64)> {
    let rows = data.test_rows();
    let mut loss_weighted = 0.0;
    let mut metric_weighted = 0.0;
    let mut total = 0usize;
    for chunk in rows.chunks(cfg.batch_size.max(1)) {
        let batch = data.gather(chunk);
        let (logits, _) = model.forward(&batch.inputs)?;
        let (loss, metric) = match &batch.targets {
            Targets::Classes(t) => {
                let (loss, _) = cross_entropy_loss(&logits, t, cfg.label_smoothing)?;
                (loss, accuracy(&logits, t))
            }
            Targets::Values(t) => {
                let (loss, _) = mse_loss(&logits, t)?;
                (loss, loss)
            }
        };
        let n = chunk.len();
        loss_weighted += loss * n as f64;
        metric_weighted += metric * n as f64;
        total += n;
    }
    Ok((
        loss_weighted / total as f64,
        metric_weighted / total as f64,
    ))
}
