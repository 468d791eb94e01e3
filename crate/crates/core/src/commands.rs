//! The `wfp` subcommands as library calls over the on-disk formats.

use std::path::{Path, PathBuf};

use serde_json::Value;
use thiserror::Error;

use crate::dataset::{process_corpus, DatasetError, ProcessedDataset, UnmonitoredPools};
use crate::defense::{defend_corpus_dir, DefenseConfig, DefenseError, OverheadSummary};
use crate::ensemble::{
    apply_threshold, average_softmax, ensure_same_classes, prediction_rows, write_predictions_csv, EnsembleError,
};
use crate::metrics::{
    closed_world_report, open_world_report, tpr_fpr_curve, write_curve_csv, EvaluationReport, MetricError, Setting,
};
use crate::model::{
    load_checkpoint, predict_rows, save_checkpoint, CheckpointHeader, ModelConfig, ModelError, ProbabilityMatrix,
    Variant,
};
use crate::synthgen::{generate_corpus, generate_site_profiles, Separability};
use crate::traces::{load_corpus, write_corpus, CorpusError};
use crate::training::{train_model, TrainingConfig, TrainingError, EVAL_BATCH};

#[derive(Debug, Error)]
pub enum CommandError {
    /// Invalid combination of otherwise well-formed options.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Defense(#[from] DefenseError),
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

impl CommandError {
    /// Short machine-readable category for error reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            CommandError::Usage(_) => "usage",
            CommandError::Corpus(_) => "corpus",
            CommandError::Dataset(DatasetError::Split(_)) => "split",
            CommandError::Dataset(_) => "dataset",
            CommandError::Model(_) => "model",
            CommandError::Training(TrainingError::Divergence { .. }) => "divergence",
            CommandError::Training(_) => "training",
            CommandError::Ensemble(_) => "ensemble",
            CommandError::Metric(_) => "metric",
            CommandError::Defense(_) => "defense",
            CommandError::Io { .. } => "io",
        }
    }
}

fn io_err(path: &Path, reason: impl std::fmt::Display) -> CommandError {
    CommandError::Io {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CommandError> {
    let json = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    std::fs::write(path, json + "\n").map_err(|e| io_err(path, e))
}

/// `path` with its extension replaced by `suffix` (`run.ckpt` -> `run.history.json`).
pub fn companion_path(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub sites: usize,
    pub traces: usize,
    pub unmon: usize,
    pub seed: u64,
    pub separability: Separability,
    pub out: PathBuf,
}

/// Name of the profile list written next to a synthetic corpus.
pub const PROFILES_FILE: &str = "profiles.json";

pub fn synth(opts: &SynthOptions) -> Result<(), CommandError> {
    if opts.sites == 0 && opts.unmon == 0 {
        return Err(CommandError::Usage("nothing to generate: --sites and --unmon are both 0".into()));
    }
    let profiles = generate_site_profiles(opts.sites, opts.seed, opts.separability);
    let corpus = generate_corpus(&profiles, opts.traces, opts.unmon, opts.seed);
    write_corpus(&opts.out, &corpus)?;
    write_json(&opts.out.join(PROFILES_FILE), &profiles)
}

#[derive(Debug, Clone)]
pub struct ExtractOptions {
    pub corpus: PathBuf,
    pub n_mon: usize,
    pub seed: u64,
    pub unmon_train: usize,
    pub unmon_test: usize,
    pub out: PathBuf,
}

pub fn extract(opts: &ExtractOptions) -> Result<ProcessedDataset, CommandError> {
    if opts.n_mon == 0 {
        return Err(CommandError::Usage("--n-mon must be at least 1".into()));
    }
    if (opts.unmon_train == 0) != (opts.unmon_test == 0) {
        return Err(CommandError::Usage(
            "--unmon-train and --unmon-test must both be zero (closed world) or both positive (open world)".into(),
        ));
    }
    let corpus = load_corpus(&opts.corpus, opts.n_mon)?;
    let pools = UnmonitoredPools {
        train: opts.unmon_train,
        test: opts.unmon_test,
    };
    let dataset = process_corpus(&corpus, pools, opts.seed)?;
    dataset.save(&opts.out)?;
    Ok(dataset)
}

/// Overlays the keys of a JSON object onto `base`; unknown keys are rejected.
pub fn merge_model_config(base: &ModelConfig, overrides: &Value) -> Result<ModelConfig, CommandError> {
    let obj = overrides
        .as_object()
        .ok_or_else(|| CommandError::Usage("model config must be a JSON object".into()))?;
    let mut merged = serde_json::to_value(base).expect("config serializes");
    let target = merged.as_object_mut().expect("config is an object");
    for (k, v) in obj {
        if !target.contains_key(k) {
            return Err(CommandError::Usage(format!("unknown model config key {k:?}")));
        }
        target.insert(k.clone(), v.clone());
    }
    serde_json::from_value(merged).map_err(|e| CommandError::Usage(format!("model config: {e}")))
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub dataset: PathBuf,
    pub variant: Variant,
    pub out: PathBuf,
    pub training: TrainingConfig,
    /// JSON object overriding fields of the default architecture.
    pub model_config: Option<PathBuf>,
    /// Defaults to `companion_path(out, "history.json")`.
    pub history: Option<PathBuf>,
}

pub fn train(opts: &TrainOptions) -> Result<CheckpointHeader, CommandError> {
    let dataset = ProcessedDataset::load(&opts.dataset)?;
    let mut config = ModelConfig::new(dataset.n_classes());
    if let Some(path) = &opts.model_config {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
        config = merge_model_config(&config, &value)?;
    }
    let trained = train_model(opts.variant, &dataset, &config, &opts.training)?;
    let header = CheckpointHeader {
        config,
        variant: opts.variant,
        val_accuracy: trained.best_val_acc,
        epoch: trained.best_epoch,
        classes: dataset.manifest.classes.clone(),
    };
    save_checkpoint(&opts.out, &trained.network, &header)?;
    let history_path = opts
        .history
        .clone()
        .unwrap_or_else(|| companion_path(&opts.out, "history.json"));
    trained.history.save(&history_path)?;
    Ok(header)
}

/// Softmax output of one checkpoint, or the mean of two, over dataset rows.
pub fn score_checkpoints(
    dataset: &ProcessedDataset,
    dir_ckpt: Option<&Path>,
    time_ckpt: Option<&Path>,
    idx: &[usize],
) -> Result<ProbabilityMatrix, CommandError> {
    let mut outputs = Vec::new();
    for (path, expected) in [(dir_ckpt, Variant::Direction), (time_ckpt, Variant::Time)] {
        let Some(path) = path else { continue };
        let (network, header) = load_checkpoint(path)?;
        if header.variant != expected {
            return Err(CommandError::Usage(format!(
                "{} holds a {} model, expected {expected}",
                path.display(),
                header.variant
            )));
        }
        ensure_same_classes(&header.classes, &dataset.manifest.classes)?;
        if header.config.seq_len != dataset.seq_len() {
            return Err(ModelError::Shape(format!(
                "{} reads {} steps, dataset rows have {}",
                path.display(),
                header.config.seq_len,
                dataset.seq_len()
            ))
            .into());
        }
        let (seq, meta) = dataset.gather(expected, idx);
        outputs.push(predict_rows(&network, &seq, &meta, idx.len(), EVAL_BATCH)?);
    }
    match outputs.as_slice() {
        [single] => Ok(single.clone()),
        [a, b] => Ok(average_softmax(a, b)?),
        _ => Err(CommandError::Usage("pass --dir-ckpt, --time-ckpt, or both".into())),
    }
}

fn unmonitored_index(dataset: &ProcessedDataset) -> Result<usize, CommandError> {
    let m = &dataset.manifest;
    if m.classes.len() != m.n_mon + 1 {
        return Err(CommandError::Usage(
            "open-world evaluation needs a dataset built with unmonitored traces".into(),
        ));
    }
    Ok(m.n_mon)
}

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub dataset: PathBuf,
    pub dir_ckpt: Option<PathBuf>,
    pub time_ckpt: Option<PathBuf>,
    pub threshold: f64,
    pub setting: Setting,
    pub report: PathBuf,
    /// Defaults to `companion_path(report, "predictions.csv")`.
    pub predictions: Option<PathBuf>,
}

/// Scores the test partition. Closed-world evaluation uses the monitored
/// test rows; open-world evaluation uses all of them.
pub fn evaluate(opts: &EvaluateOptions) -> Result<EvaluationReport, CommandError> {
    if opts.dir_ckpt.is_none() && opts.time_ckpt.is_none() {
        return Err(CommandError::Usage("pass --dir-ckpt, --time-ckpt, or both".into()));
    }
    if !(0.0..=1.0).contains(&opts.threshold) {
        return Err(CommandError::Usage(format!("--threshold {} outside [0, 1]", opts.threshold)));
    }
    if opts.setting == Setting::Closed && opts.threshold != 0.0 {
        return Err(CommandError::Usage("--threshold applies only to --setting open".into()));
    }
    let dataset = ProcessedDataset::load(&opts.dataset)?;
    let n_mon = dataset.manifest.n_mon;
    let unmon = match opts.setting {
        Setting::Open => Some(unmonitored_index(&dataset)?),
        Setting::Closed => None,
    };
    let idx: Vec<usize> = match opts.setting {
        Setting::Open => dataset.manifest.splits.test.clone(),
        Setting::Closed => dataset
            .manifest
            .splits
            .test
            .iter()
            .copied()
            .filter(|&i| dataset.labels[i] < n_mon)
            .collect(),
    };
    let probs = score_checkpoints(&dataset, opts.dir_ckpt.as_deref(), opts.time_ckpt.as_deref(), &idx)?;
    let preds = apply_threshold(&probs, opts.threshold, unmon)?;
    let labels = dataset.labels_at(&idx);
    let report = match unmon {
        Some(u) => open_world_report(&preds, &labels, u, opts.threshold)?,
        None => closed_world_report(&preds, &labels)?,
    };
    write_json(&opts.report, &report)?;
    let pred_path = opts
        .predictions
        .clone()
        .unwrap_or_else(|| companion_path(&opts.report, "predictions.csv"));
    let rows = prediction_rows(&probs, &idx, &labels, &preds, opts.threshold);
    write_predictions_csv(&pred_path, &rows).map_err(|e| io_err(&pred_path, e))?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct CurveOptions {
    pub dataset: PathBuf,
    pub dir_ckpt: Option<PathBuf>,
    pub time_ckpt: Option<PathBuf>,
    pub thresholds: Vec<f64>,
    pub out: PathBuf,
}

pub fn curve(opts: &CurveOptions) -> Result<Vec<EvaluationReport>, CommandError> {
    if opts.thresholds.is_empty() {
        return Err(CommandError::Usage("--thresholds needs at least one value".into()));
    }
    if let Some(t) = opts.thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(CommandError::Usage(format!("threshold {t} outside [0, 1]")));
    }
    if opts.thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(CommandError::Usage("--thresholds must be ascending".into()));
    }
    let dataset = ProcessedDataset::load(&opts.dataset)?;
    let unmon = unmonitored_index(&dataset)?;
    let idx = dataset.manifest.splits.test.clone();
    let probs = score_checkpoints(&dataset, opts.dir_ckpt.as_deref(), opts.time_ckpt.as_deref(), &idx)?;
    let reports = tpr_fpr_curve(&probs, &dataset.labels_at(&idx), &opts.thresholds, unmon)?;
    write_curve_csv(&opts.out, &reports).map_err(|e| io_err(&opts.out, e))?;
    Ok(reports)
}

#[derive(Debug, Clone)]
pub struct DefendOptions {
    pub corpus: PathBuf,
    pub config: DefenseConfig,
    pub out: PathBuf,
    pub overhead_report: PathBuf,
}

pub fn defend(opts: &DefendOptions) -> Result<OverheadSummary, CommandError> {
    if let Err(e) = opts.config.validate() {
        return Err(CommandError::Usage(e.to_string()));
    }
    let summary = defend_corpus_dir(&opts.corpus, &opts.out, opts.config)?;
    write_json(&opts.overhead_report, &summary)?;
    Ok(summary)
}
