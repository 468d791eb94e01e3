//! Post-training combination of the direction and timing models and the
//! confidence threshold that reassigns low-confidence monitored predictions
//! to the unmonitored class.

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::model::ProbabilityMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error("ensemble inputs disagree: {0}")]
    Mismatch(String),
    #[error("threshold {0} outside [0, 1]")]
    Range(f64),
    #[error("closed-world predictions take threshold 0, got {0}")]
    ClosedWorldThreshold(f64),
    #[error("unmonitored index {index} out of range for {n_classes} classes")]
    UnmonitoredIndex { index: usize, n_classes: usize },
}

/// Requires both models to share one class ordering.
pub fn ensure_same_classes(a: &[String], b: &[String]) -> Result<(), EnsembleError> {
    if a != b {
        return Err(EnsembleError::Mismatch(format!(
            "class lists differ ({} vs {} classes)",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Elementwise mean of the two models' softmax outputs.
pub fn average_softmax(
    p_dir: &ProbabilityMatrix,
    p_time: &ProbabilityMatrix,
) -> Result<ProbabilityMatrix, EnsembleError> {
    if p_dir.n_classes() != p_time.n_classes() || p_dir.n_rows() != p_time.n_rows() {
        return Err(EnsembleError::Mismatch(format!(
            "shapes {}x{} and {}x{}",
            p_dir.n_rows(),
            p_dir.n_classes(),
            p_time.n_rows(),
            p_time.n_classes()
        )));
    }
    let data = p_dir
        .as_slice()
        .iter()
        .zip(p_time.as_slice())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    Ok(ProbabilityMatrix::new(p_dir.n_classes(), data).expect("mean of distributions is a distribution"))
}

/// Predicted class per row.
///
/// The argmax (lowest index on ties) is kept unless it is a monitored class
/// whose probability falls below `threshold`, in which case the row goes to
/// `unmonitored_index`. Closed-world use passes `None` and threshold 0.
pub fn apply_threshold(
    p: &ProbabilityMatrix,
    threshold: f64,
    unmonitored_index: Option<usize>,
) -> Result<Vec<usize>, EnsembleError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(EnsembleError::Range(threshold));
    }
    match unmonitored_index {
        None if threshold != 0.0 => return Err(EnsembleError::ClosedWorldThreshold(threshold)),
        Some(index) if index >= p.n_classes() => {
            return Err(EnsembleError::UnmonitoredIndex {
                index,
                n_classes: p.n_classes(),
            })
        }
        _ => {}
    }
    Ok((0..p.n_rows())
        .map(|i| {
            let (class, prob) = p.argmax(i);
            match unmonitored_index {
                Some(um) if class != um && prob < threshold => um,
                _ => class,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRow {
    pub trace_index: usize,
    pub true_class: usize,
    pub p_argmax: f64,
    pub argmax_class: usize,
    pub predicted_class: usize,
    pub threshold: f64,
}

pub fn prediction_rows(
    p: &ProbabilityMatrix,
    trace_indices: &[usize],
    labels: &[usize],
    predictions: &[usize],
    threshold: f64,
) -> Vec<PredictionRow> {
    (0..p.n_rows())
        .map(|i| {
            let (argmax_class, p_argmax) = p.argmax(i);
            PredictionRow {
                trace_index: trace_indices[i],
                true_class: labels[i],
                p_argmax,
                argmax_class,
                predicted_class: predictions[i],
                threshold,
            }
        })
        .collect()
}

/// Writes `trace_index,true_class,p_argmax,argmax_class,predicted_class,threshold`.
pub fn write_predictions_csv(path: &Path, rows: &[PredictionRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
