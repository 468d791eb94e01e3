//! Closed-world accuracy, open-world Two-TPR / Multi-TPR / FPR, and
//! threshold trade-off curves.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{apply_threshold, EnsembleError};
use crate::model::ProbabilityMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("{preds} predictions for {labels} labels")]
    Length { preds: usize, labels: usize },
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("thresholds must be sorted ascending")]
    Unsorted,
    #[error(transparent)]
    Threshold(#[from] EnsembleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Closed,
    Open,
}

impl std::str::FromStr for Setting {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "closed" => Ok(Setting::Closed),
            "open" => Ok(Setting::Open),
            other => Err(format!("unknown setting {other:?} (closed|open)")),
        }
    }
}

/// Raw tallies behind the reported rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub n_monitored_test: usize,
    pub n_unmonitored_test: usize,
    /// Monitored rows predicted as any monitored site.
    pub true_positives: usize,
    /// Monitored rows predicted as their own site.
    pub correct_site: usize,
    /// Unmonitored rows predicted as some monitored site.
    pub false_positives: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenWorldRates {
    pub two_tpr: f64,
    pub multi_tpr: f64,
    pub fpr: f64,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub setting: Setting,
    pub threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub two_tpr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub multi_tpr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fpr: Option<f64>,
    pub counts: Counts,
}

fn check_lengths(preds: &[usize], labels: &[usize]) -> Result<(), MetricError> {
    if preds.len() != labels.len() {
        return Err(MetricError::Length {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    Ok(())
}

pub fn closed_world_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64, MetricError> {
    check_lengths(preds, labels)?;
    if labels.is_empty() {
        return Err(MetricError::Undefined("no test rows".into()));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn open_world_metrics(
    preds: &[usize],
    labels: &[usize],
    unmonitored_index: usize,
) -> Result<OpenWorldRates, MetricError> {
    check_lengths(preds, labels)?;
    let mut c = Counts::default();
    for (&p, &l) in preds.iter().zip(labels) {
        let predicted_monitored = p != unmonitored_index;
        if l != unmonitored_index {
            c.n_monitored_test += 1;
            c.true_positives += predicted_monitored as usize;
            c.correct_site += (p == l) as usize;
        } else {
            c.n_unmonitored_test += 1;
            c.false_positives += predicted_monitored as usize;
        }
    }
    if c.n_monitored_test == 0 {
        return Err(MetricError::Undefined("no monitored test rows".into()));
    }
    if c.n_unmonitored_test == 0 {
        return Err(MetricError::Undefined("no unmonitored test rows".into()));
    }
    let m = c.n_monitored_test as f64;
    Ok(OpenWorldRates {
        two_tpr: c.true_positives as f64 / m,
        multi_tpr: c.correct_site as f64 / m,
        fpr: c.false_positives as f64 / c.n_unmonitored_test as f64,
        counts: c,
    })
}

pub fn closed_world_report(preds: &[usize], labels: &[usize]) -> Result<EvaluationReport, MetricError> {
    let accuracy = closed_world_accuracy(preds, labels)?;
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(EvaluationReport {
        setting: Setting::Closed,
        threshold: 0.0,
        accuracy: Some(accuracy),
        two_tpr: None,
        multi_tpr: None,
        fpr: None,
        counts: Counts {
            n_monitored_test: labels.len(),
            n_unmonitored_test: 0,
            true_positives: labels.len(),
            correct_site: correct,
            false_positives: 0,
        },
    })
}

pub fn open_world_report(
    preds: &[usize],
    labels: &[usize],
    unmonitored_index: usize,
    threshold: f64,
) -> Result<EvaluationReport, MetricError> {
    let r = open_world_metrics(preds, labels, unmonitored_index)?;
    Ok(EvaluationReport {
        setting: Setting::Open,
        threshold,
        accuracy: None,
        two_tpr: Some(r.two_tpr),
        multi_tpr: Some(r.multi_tpr),
        fpr: Some(r.fpr),
        counts: r.counts,
    })
}

/// One open-world report per threshold.
pub fn tpr_fpr_curve(
    probs: &ProbabilityMatrix,
    labels: &[usize],
    thresholds: &[f64],
    unmonitored_index: usize,
) -> Result<Vec<EvaluationReport>, MetricError> {
    if thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(MetricError::Unsorted);
    }
    thresholds
        .iter()
        .map(|&t| {
            let preds = apply_threshold(probs, t, Some(unmonitored_index))?;
            open_world_report(&preds, labels, unmonitored_index, t)
        })
        .collect()
}

/// Writes `threshold,two_tpr,multi_tpr,fpr`.
pub fn write_curve_csv(path: &Path, curve: &[EvaluationReport]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["threshold", "two_tpr", "multi_tpr", "fpr"])?;
    for r in curve {
        let field = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([r.threshold.to_string(), field(r.two_tpr), field(r.multi_tpr), field(r.fpr)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A: usize = 0;
    const B: usize = 1;
    const UM: usize = 2;

    #[test]
    fn accuracy_examples() {
        assert!((closed_world_accuracy(&[0, 1, 1], &[0, 1, 2]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(closed_world_accuracy(&[3, 1, 4], &[3, 1, 4]).unwrap(), 1.0);
        assert!(closed_world_accuracy(&[], &[]).is_err());
        assert!(matches!(closed_world_accuracy(&[1], &[1, 2]), Err(MetricError::Length { .. })));
    }

    #[test]
    fn open_world_hand_count() {
        let r = open_world_metrics(&[A, B, UM, A], &[A, A, A, UM], UM).unwrap();
        assert!((r.two_tpr - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.multi_tpr - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.fpr, 1.0);
        assert_eq!(
            r.counts,
            Counts {
                n_monitored_test: 3,
                n_unmonitored_test: 1,
                true_positives: 2,
                correct_site: 1,
                false_positives: 1
            }
        );
    }

    #[test]
    fn all_unmonitored_predictions_zero_everything() {
        let r = open_world_metrics(&[UM; 4], &[A, B, UM, UM], UM).unwrap();
        assert_eq!((r.two_tpr, r.multi_tpr, r.fpr), (0.0, 0.0, 0.0));
    }

    #[test]
    fn missing_population_is_rejected() {
        assert!(matches!(open_world_metrics(&[A], &[A], UM), Err(MetricError::Undefined(_))));
        assert!(matches!(open_world_metrics(&[A], &[UM], UM), Err(MetricError::Undefined(_))));
    }

    #[test]
    fn curve_endpoints() {
        let p = ProbabilityMatrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.3, 0.6, 0.1],
            vec![0.5, 0.2, 0.3],
        ])
        .unwrap();
        let labels = [A, B, UM];
        let curve = tpr_fpr_curve(&p, &labels, &[0.0, 1.0], UM).unwrap();
        assert_eq!(curve[0].multi_tpr, Some(1.0));
        assert_eq!(curve[0].fpr, Some(1.0));
        assert_eq!(curve[1].two_tpr, Some(0.5));
        assert_eq!(curve[1].fpr, Some(0.0));
        assert_eq!(tpr_fpr_curve(&p, &labels, &[0.5, 0.1], UM), Err(MetricError::Unsorted));
    }

    fn arb_case() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (1usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec(0usize..4, n),
                prop::collection::vec(0usize..4, n),
            )
        })
    }

    proptest! {
        #[test]
        fn multi_never_exceeds_two((preds, labels) in arb_case()) {
            if let Ok(r) = open_world_metrics(&preds, &labels, 3) {
                prop_assert!(r.multi_tpr <= r.two_tpr);
                for v in [r.two_tpr, r.multi_tpr, r.fpr] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }

        #[test]
        fn rates_are_permutation_invariant((preds, labels) in arb_case(), rot in 0usize..40) {
            let n = preds.len();
            let k = rot % n;
            let mut p2 = preds.clone();
            let mut l2 = labels.clone();
            p2.rotate_left(k);
            l2.rotate_left(k);
            prop_assert_eq!(
                open_world_metrics(&preds, &labels, 3).ok(),
                open_world_metrics(&p2, &l2, 3).ok()
            );
        }
    }
}
