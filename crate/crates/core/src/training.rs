//! Adam training with plateau learning-rate decay, early stopping, and
//! best-epoch selection on validation accuracy.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ProcessedDataset;
use crate::metrics::closed_world_accuracy;
use crate::model::{argmax, predict_rows, ModelConfig, ModelError, Network, Variant};
use crate::synthgen::derive_seed;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset unsuitable for training: {0}")]
    Dataset(String),
    #[error("loss diverged at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("writing history {path}: {reason}")]
    History { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub decay_patience: usize,
    pub stop_patience: usize,
    pub min_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            initial_lr: 0.001,
            decay_factor: 0.1f64.sqrt(),
            decay_patience: 5,
            stop_patience: 10,
            min_lr: 0.00001,
            batch_size: 128,
            max_epochs: 150,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: String| Err(TrainingError::Config(m));
        if !(self.initial_lr.is_finite() && self.initial_lr > 0.0) {
            return bad(format!("initial_lr must be positive, got {}", self.initial_lr));
        }
        if !(self.min_lr > 0.0 && self.min_lr <= self.initial_lr) {
            return bad(format!(
                "min_lr must lie in (0, initial_lr], got {} with initial_lr {}",
                self.min_lr, self.initial_lr
            ));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return bad(format!("decay_factor must lie in (0, 1), got {}", self.decay_factor));
        }
        if self.decay_patience == 0 || self.stop_patience != 2 * self.decay_patience {
            return bad(format!(
                "stop_patience ({}) must be twice a positive decay_patience ({})",
                self.stop_patience, self.decay_patience
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleState {
    pub current_lr: f64,
    pub best_val_acc: f64,
    pub epochs_since_improvement: usize,
    pub epochs_since_decay_trigger: usize,
}

impl ScheduleState {
    pub fn new(config: &TrainingConfig) -> Self {
        ScheduleState {
            current_lr: config.initial_lr,
            best_val_acc: f64::NEG_INFINITY,
            epochs_since_improvement: 0,
            epochs_since_decay_trigger: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Continue,
    Decay,
    Stop,
}

/// One end-of-epoch transition. A strictly higher validation accuracy resets
/// both counters. Otherwise the stop counter is checked first, then the decay
/// counter; a decay resets only its own counter.
pub fn schedule_step(state: ScheduleState, config: &TrainingConfig, val_acc: f64) -> (ScheduleState, Decision) {
    let mut s = state;
    if val_acc > s.best_val_acc {
        s.best_val_acc = val_acc;
        s.epochs_since_improvement = 0;
        s.epochs_since_decay_trigger = 0;
        return (s, Decision::Continue);
    }
    s.epochs_since_improvement += 1;
    s.epochs_since_decay_trigger += 1;
    if s.epochs_since_improvement >= config.stop_patience {
        return (s, Decision::Stop);
    }
    if s.epochs_since_decay_trigger >= config.decay_patience {
        s.current_lr = (s.current_lr * config.decay_factor).max(config.min_lr);
        s.epochs_since_decay_trigger = 0;
        return (s, Decision::Decay);
    }
    (s, Decision::Continue)
}

/// Adam with bias correction over every trainable array of a network.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(network: &mut Network<f32>) -> Self {
        let sizes: Vec<usize> = network.params_mut().iter().map(|p| p.value.len()).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn update(&mut self, network: &mut Network<f32>, lr: f64) {
        self.step += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let step_size = (lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for ((p, m), v) in network.params_mut().into_iter().zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), m), v) in p.value.iter_mut().zip(p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= step_size * *m / (v.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub decision: Decision,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn save(&self, path: &Path) -> Result<(), TrainingError> {
        let err = |e: &dyn std::fmt::Display| TrainingError::History {
            path: path.display().to_string(),
            reason: e.to_string(),
        };
        let json = serde_json::to_string_pretty(self).map_err(|e| err(&e))?;
        std::fs::write(path, json + "\n").map_err(|e| err(&e))
    }
}

pub struct TrainedModel {
    pub network: Network<f32>,
    pub history: TrainingHistory,
    /// 1-based epoch of the returned weights; 0 when no epoch ran.
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

/// Batch size used for validation and test inference.
pub const EVAL_BATCH: usize = 64;

/// Accuracy of `network` on the dataset rows `idx`.
pub fn evaluate_accuracy(
    network: &Network<f32>,
    dataset: &ProcessedDataset,
    variant: Variant,
    idx: &[usize],
) -> Result<f64, TrainingError> {
    let (seq, meta) = dataset.gather(variant, idx);
    let probs = predict_rows(network, &seq, &meta, idx.len(), EVAL_BATCH)?;
    let preds: Vec<usize> = (0..probs.n_rows()).map(|i| probs.argmax(i).0).collect();
    closed_world_accuracy(&preds, &dataset.labels_at(idx)).map_err(|e| TrainingError::Dataset(e.to_string()))
}

/// Every training step allocates and frees a full activation tape. glibc
/// serves buffers that large with fresh mappings, and faulting them in again
/// on every batch can cost more than the arithmetic, so freed memory is kept
/// in the heap for reuse. Secondary arenas, used by threads other than the
/// main one, do not honour these limits, so every thread shares one arena.
fn retain_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        static ONCE: std::sync::Once = std::sync::Once::new();
        // SAFETY: mallopt only adjusts allocator tuning parameters.
        ONCE.call_once(|| unsafe {
            libc::mallopt(libc::M_ARENA_MAX, 1);
            libc::mallopt(libc::M_MMAP_MAX, 0);
            libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
        });
    }
}

fn snapshot(network: &Network<f32>) -> Vec<Vec<f32>> {
    network.state().into_iter().map(|s| s.data.to_vec()).collect()
}

fn restore(network: &mut Network<f32>, saved: &[Vec<f32>]) {
    for (s, src) in network.state_mut().into_iter().zip(saved) {
        s.data.copy_from_slice(src);
    }
}

/// Trains and logs one progress line per epoch to standard error.
pub fn train_model(
    variant: Variant,
    dataset: &ProcessedDataset,
    model_config: &ModelConfig,
    config: &TrainingConfig,
) -> Result<TrainedModel, TrainingError> {
    train_model_with(variant, dataset, model_config, config, |r| {
        eprintln!(
            "[{variant}] epoch {:>3}  loss {:.4}  train_acc {:.4}  val_acc {:.4}  lr {:.3e}  {:?}",
            r.epoch, r.train_loss, r.train_acc, r.val_acc, r.lr, r.decision
        )
    })
}

/// As [`train_model`], reporting each finished epoch to `on_epoch`.
pub fn train_model_with(
    variant: Variant,
    dataset: &ProcessedDataset,
    model_config: &ModelConfig,
    config: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedModel, TrainingError> {
    config.validate()?;
    model_config.validate()?;
    retain_freed_memory();
    let splits = &dataset.manifest.splits;
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(TrainingError::Dataset(format!(
            "need non-empty train and val partitions, have {} and {}",
            splits.train.len(),
            splits.val.len()
        )));
    }
    if model_config.n_classes != dataset.n_classes() {
        return Err(TrainingError::Dataset(format!(
            "model has {} classes, dataset has {}",
            model_config.n_classes,
            dataset.n_classes()
        )));
    }
    if model_config.seq_len != dataset.seq_len() {
        return Err(TrainingError::Dataset(format!(
            "model reads {} steps, dataset rows have {}",
            model_config.seq_len,
            dataset.seq_len()
        )));
    }

    let mut network = Network::<f32>::new(model_config.clone(), derive_seed(config.seed, 20, 0))?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 21, 0));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 22, 0));
    let mut adam = Adam::new(&mut network);
    let mut schedule = ScheduleState::new(config);
    let mut history = TrainingHistory::default();
    let mut best = (0usize, f64::NEG_INFINITY, snapshot(&network));

    if config.max_epochs == 0 {
        let acc = evaluate_accuracy(&network, dataset, variant, &splits.val)?;
        return Ok(TrainedModel {
            network,
            history,
            best_epoch: 0,
            best_val_acc: acc,
        });
    }

    let mut order = splits.train.clone();
    for epoch in 1..=config.max_epochs {
        let lr = schedule.current_lr;
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (batch_no, idx) in order.chunks(config.batch_size).enumerate() {
            let (seq, meta) = dataset.gather(variant, idx);
            let labels = dataset.labels_at(idx);
            network.zero_grad();
            let tape = network.forward_train(&seq, &meta, idx.len(), &mut dropout_rng)?;
            let loss = network.backward(&tape, &labels)?;
            if !loss.is_finite() {
                return Err(TrainingError::Divergence { epoch, batch: batch_no });
            }
            let n = network.n_classes();
            correct += tape
                .probs
                .chunks(n)
                .zip(&labels)
                .filter(|(row, &l)| argmax(row).0 == l)
                .count();
            loss_sum += loss * idx.len() as f64;
            adam.update(&mut network, lr);
            if !network.is_finite() {
                return Err(TrainingError::Divergence { epoch, batch: batch_no });
            }
        }
        let val_acc = evaluate_accuracy(&network, dataset, variant, &splits.val)?;
        if val_acc > best.1 {
            best = (epoch, val_acc, snapshot(&network));
        }
        let (next, decision) = schedule_step(schedule, config, val_acc);
        schedule = next;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_acc: correct as f64 / order.len() as f64,
            val_acc,
            lr,
            decision,
        };
        on_epoch(&record);
        history.epochs.push(record);
        if decision == Decision::Stop {
            break;
        }
    }
    restore(&mut network, &best.2);
    Ok(TrainedModel {
        network,
        history,
        best_epoch: best.0,
        best_val_acc: best.1,
    })
}
