//! Losses and the mini-batch training loop.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{AlignedSample, Point3};
use crate::model::{FusionModel, ModelConfig, ModelError, Normalization};
use crate::nn::{adam_step, AdamConfig, Mode, Parameterized};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {0}")]
    Diverged(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    SmoothL1,
    Rmse,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::SmoothL1 => f.write_str("smooth_l1"),
            LossKind::Rmse => f.write_str("rmse"),
        }
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "smooth_l1" => Ok(LossKind::SmoothL1),
            "rmse" => Ok(LossKind::Rmse),
            other => Err(format!("unknown loss '{other}' (expected smooth_l1 or rmse)")),
        }
    }
}

/// Elementwise Smooth L1 on one difference.
pub fn smooth_l1_scalar(diff: f64, beta: f64) -> f64 {
    let a = diff.abs();
    if a < beta {
        0.5 * a * a / beta
    } else {
        a - 0.5 * beta
    }
}

fn smooth_l1_grad(diff: f64, beta: f64) -> f64 {
    if diff.abs() < beta {
        diff / beta
    } else {
        diff.signum()
    }
}

/// Mean over the three components, then over the batch. Returns the loss
/// and `dL/dpred` per sample.
pub fn smooth_l1(preds: &[[f64; 3]], targets: &[[f64; 3]], beta: f64) -> (f64, Vec<[f64; 3]>) {
    assert!(beta > 0.0, "beta must be positive");
    assert_eq!(preds.len(), targets.len());
    let n = (3 * preds.len()) as f64;
    let mut total = 0.0;
    let grads = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            std::array::from_fn(|k| {
                let d = p[k] - t[k];
                total += smooth_l1_scalar(d, beta);
                smooth_l1_grad(d, beta) / n
            })
        })
        .collect();
    (total / n, grads)
}

/// `√(mean of squared component errors)`; zero gradient at zero error.
pub fn rmse_loss(preds: &[[f64; 3]], targets: &[[f64; 3]]) -> (f64, Vec<[f64; 3]>) {
    assert!(!preds.is_empty(), "rmse of an empty batch");
    assert_eq!(preds.len(), targets.len());
    let n = (3 * preds.len()) as f64;
    let ss: f64 = preds
        .iter()
        .zip(targets)
        .flat_map(|(p, t)| (0..3).map(move |k| (p[k] - t[k]).powi(2)))
        .sum();
    let loss = (ss / n).sqrt();
    let grads = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            std::array::from_fn(|k| {
                if loss > 0.0 {
                    (p[k] - t[k]) / (n * loss)
                } else {
                    0.0
                }
            })
        })
        .collect();
    (loss, grads)
}

/// `beta` applies to Smooth L1 only.
pub fn batch_loss(kind: LossKind, beta: f64, preds: &[[f64; 3]], targets: &[[f64; 3]]) -> (f64, Vec<[f64; 3]>) {
    match kind {
        LossKind::SmoothL1 => smooth_l1(preds, targets, beta),
        LossKind::Rmse => rmse_loss(preds, targets),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub loss: LossKind,
    /// Smooth L1 transition point (m).
    pub beta: f64,
    /// Seeds shuffling, the split and dropout.
    pub seed: u64,
    /// Fraction of trajectories held out; 0 validates on the training set.
    pub val_fraction: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 50,
            adam: AdamConfig::default(),
            loss: LossKind::default(),
            beta: 1.0,
            seed: 0,
            val_fraction: 0.2,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::Config("batch_size and epochs must be at least 1".into()));
        }
        if self.loss == LossKind::SmoothL1 && !(self.beta > 0.0) {
            return Err(TrainError::Config("smooth_l1 beta must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(TrainError::Config("val_fraction must lie in [0, 1)".into()));
        }
        self.adam.validate().map_err(TrainError::Config)?;
        self.model.validate()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_pos_rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_pos_rmse: f64,
    pub wall_time_s: f64,
    pub train_samples: usize,
    pub val_samples: usize,
    pub val_trajectories: Vec<u32>,
}

impl TrainReport {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }
}

pub struct TrainOutcome {
    /// Weights from the best validation epoch.
    pub model: FusionModel,
    pub report: TrainReport,
}

/// Splits sample indices by trajectory id. Validation trajectories are the
/// first `round(fraction · count)` (at least one) of a seeded shuffle.
pub fn split_by_trajectory(
    samples: &[AlignedSample],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<u32>), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset("no samples"));
    }
    let all: Vec<usize> = (0..samples.len()).collect();
    if val_fraction == 0.0 {
        return Ok((all.clone(), all, Vec::new()));
    }
    let mut ids: Vec<u32> = samples.iter().map(|s| s.trajectory).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(TrainError::Config(format!(
            "a trajectory split needs at least 2 trajectories, found {}",
            ids.len()
        )));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((val_fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    let mut val_ids = ids[..k].to_vec();
    val_ids.sort_unstable();
    let (val, train): (Vec<usize>, Vec<usize>) =
        all.into_iter().partition(|&i| val_ids.binary_search(&samples[i].trajectory).is_ok());
    Ok((train, val, val_ids))
}

const EVAL_BATCH: usize = 64;

/// Eval-mode predictions, metres.
pub fn predict_samples(model: &FusionModel, samples: &[&AlignedSample]) -> Result<Vec<Point3>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let (ys, _) = model.forward_batch(chunk, Mode::Eval, &mut rng)?;
        out.extend(ys.into_iter().map(Point3::from_array));
    }
    Ok(out)
}

/// Euclidean position RMSE of eval-mode predictions against sample truth.
pub fn position_rmse_on(model: &FusionModel, samples: &[&AlignedSample]) -> Result<f64, ModelError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let preds = predict_samples(model, samples)?;
    let ss: f64 = preds
        .iter()
        .zip(samples)
        .map(|(p, s)| p.dist(s.truth).powi(2))
        .sum();
    Ok((ss / samples.len() as f64).sqrt())
}

/// Splits by trajectory and trains.
pub fn train(samples: &[AlignedSample], cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let (tr, va, val_ids) = split_by_trajectory(samples, cfg.val_fraction, cfg.seed)?;
    let train_set: Vec<&AlignedSample> = tr.iter().map(|&i| &samples[i]).collect();
    let val_set: Vec<&AlignedSample> = va.iter().map(|&i| &samples[i]).collect();
    let mut out = train_on(&train_set, &val_set, cfg)?;
    out.report.val_trajectories = val_ids;
    Ok(out)
}

/// Trains on `train_set`, scoring `val_set` after every epoch and keeping the
/// best-scoring weights (earliest on ties).
pub fn train_on(
    train_set: &[&AlignedSample],
    val_set: &[&AlignedSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset("no training samples"));
    }
    let start = Instant::now();
    let mut model = FusionModel::new(cfg.model)?;
    let owned: Vec<AlignedSample> = train_set.iter().map(|s| (*s).clone()).collect();
    model.normalization = Normalization::fit(&owned);
    drop(owned);
    let val_set = if val_set.is_empty() { train_set } else { val_set };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, FusionModel)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut weighted = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&AlignedSample> = chunk.iter().map(|&i| train_set[i]).collect();
            let targets: Vec<[f64; 3]> = batch.iter().map(|s| s.truth.to_array()).collect();
            let (preds, cache) = model.forward_batch(&batch, Mode::Train, &mut dropout_rng)?;
            let (loss, grads) = batch_loss(cfg.loss, cfg.beta, &preds, &targets);
            model.backward(&cache, &grads)?;
            adam_step(model.params_mut(), &cfg.adam);
            weighted += loss * batch.len() as f64;
        }
        let train_loss = weighted / train_set.len() as f64;
        if !train_loss.is_finite() {
            return Err(TrainError::Diverged(epoch));
        }
        let val_pos_rmse = position_rmse_on(&model, val_set)?;
        epochs.push(EpochStats {
            epoch,
            train_loss,
            val_pos_rmse,
        });
        if best.as_ref().is_none_or(|(_, b, _)| val_pos_rmse < *b) {
            best = Some((epoch, val_pos_rmse, model.clone()));
        }
    }
    let (best_epoch, best_val_pos_rmse, best_model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model: best_model,
        report: TrainReport {
            epochs,
            best_epoch,
            best_val_pos_rmse,
            wall_time_s: start.elapsed().as_secs_f64(),
            train_samples: train_set.len(),
            val_samples: val_set.len(),
            val_trajectories: Vec::new(),
        },
    })
}

/// `epoch,train_loss,val_pos_rmse` with shortest round-trip floats.
pub fn write_metrics_csv(path: &Path, report: &TrainReport) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,train_loss,val_pos_rmse")?;
    for e in &report.epochs {
        writeln!(f, "{},{},{}", e.epoch, e.train_loss, e.val_pos_rmse)?;
    }
    f.flush()
}
