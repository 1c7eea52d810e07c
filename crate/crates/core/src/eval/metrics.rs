use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No predicted and no gold positives; scored 1 by convention.
    pub vacuous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_label: Vec<LabelScore>,
}

/// Exact-set accuracy and macro P/R/F1 over `labels` (or, when empty, every
/// label seen in either side).
pub fn classification_metrics(
    pred: &[BTreeSet<String>],
    gold: &[BTreeSet<String>],
    labels: &[String],
) -> Result<ClassificationMetrics, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::LengthMismatch { pred: pred.len(), gold: gold.len() });
    }
    if pred.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let label_set: Vec<String> = if labels.is_empty() {
        pred.iter().chain(gold).flatten().cloned().collect::<BTreeSet<_>>().into_iter().collect()
    } else {
        labels.to_vec()
    };
    let exact = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    let per_label: Vec<LabelScore> = label_set
        .iter()
        .map(|l| {
            let (mut tp, mut fp, mut fnn) = (0u64, 0u64, 0u64);
            for (p, g) in pred.iter().zip(gold) {
                match (p.contains(l), g.contains(l)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fnn += 1,
                    _ => {}
                }
            }
            if tp + fp == 0 && tp + fnn == 0 {
                return LabelScore { label: l.clone(), precision: 1.0, recall: 1.0, f1: 1.0, vacuous: true };
            }
            let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fnn == 0 { 0.0 } else { tp as f64 / (tp + fnn) as f64 };
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            LabelScore { label: l.clone(), precision, recall, f1, vacuous: false }
        })
        .collect();
    let mean = |f: fn(&LabelScore) -> f64| {
        if per_label.is_empty() {
            1.0
        } else {
            per_label.iter().map(f).sum::<f64>() / per_label.len() as f64
        }
    };
    Ok(ClassificationMetrics {
        accuracy: exact as f64 / pred.len() as f64,
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        macro_f1: mean(|s| s.f1),
        per_label,
    })
}
