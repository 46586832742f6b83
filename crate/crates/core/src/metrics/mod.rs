//! Confusion counts, accuracy/precision/recall, Mann–Whitney AUC, and
//! before/after attack reports.

mod report;

pub use report::{read_report, report_timestamp, write_report, AttackReport, REPORT_FILE, SUMMARY_FILE};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} predictions, {1} labels")]
    LengthMismatch(usize, usize),
    #[error("nothing to evaluate")]
    Empty,
    #[error("label {0} is outside the class range")]
    BadLabel(usize),
    #[error("cannot write report: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Binary confusion counts with fraud (label 1) as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<ConfusionCounts> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut c = ConfusionCounts::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p != 0, l != 0) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Probability that a random positive outscores a random negative, ties
/// counted one half. `None` when either class is absent.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels must align");
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Midranks over tie groups, then the rank-sum form of the U statistic.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] != 0 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Before,
    After,
}

/// Evaluation summary. Binary bundles carry confusion counts; multi-class
/// bundles use macro-averaged precision, recall and one-vs-rest AUC and
/// have no counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub phase: Phase,
    pub n: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub auc: Option<f64>,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<ConfusionCounts>,
}

impl MetricsBundle {
    pub fn with_phase(mut self, phase: Phase) -> Self {
        self.phase = phase;
        self
    }
}

/// Bundle from binary counts plus aligned scores for AUC.
pub fn metrics(counts: ConfusionCounts, scores: &[f64], labels: &[u8]) -> MetricsBundle {
    let auc = if scores.is_empty() { None } else { auc(scores, labels) };
    if auc.is_none() && !scores.is_empty() {
        log::warn!("AUC undefined: evaluation labels contain a single class");
    }
    MetricsBundle {
        phase: Phase::Before,
        n: counts.total(),
        accuracy: counts.accuracy(),
        precision: counts.precision(),
        recall: counts.recall(),
        auc,
        counts: Some(counts),
    }
}

/// Convenience: counts from hard predictions, then [`metrics`].
pub fn evaluate_binary(predictions: &[u8], scores: &[f64], labels: &[u8]) -> Result<MetricsBundle> {
    let c = confusion(predictions, labels)?;
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    Ok(metrics(c, scores, labels))
}

/// Multi-class bundle. Precision and recall are averaged over classes that
/// occur in the labels or predictions; `probs` (row-major, `classes` wide)
/// enables macro one-vs-rest AUC over classes with both positives and
/// negatives.
pub fn evaluate_multiclass(
    predictions: &[usize],
    labels: &[usize],
    probs: Option<&[f32]>,
    classes: usize,
) -> Result<MetricsBundle> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&c| c >= classes) {
        return Err(MetricsError::BadLabel(bad));
    }
    let mut tp = vec![0u64; classes];
    let mut pred_count = vec![0u64; classes];
    let mut true_count = vec![0u64; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        pred_count[p] += 1;
        true_count[l] += 1;
        if p == l {
            tp[p] += 1;
        }
    }
    let present: Vec<usize> = (0..classes).filter(|&c| pred_count[c] + true_count[c] > 0).collect();
    let k = present.len() as f64;
    let precision = present.iter().map(|&c| ratio(tp[c], pred_count[c])).sum::<f64>() / k;
    let recall = present.iter().map(|&c| ratio(tp[c], true_count[c])).sum::<f64>() / k;
    let correct: u64 = tp.iter().sum();

    let auc = probs.and_then(|probs| {
        let n = labels.len();
        let aucs: Vec<f64> = (0..classes)
            .filter_map(|c| {
                let scores: Vec<f64> = (0..n).map(|i| probs[i * classes + c] as f64).collect();
                let bin: Vec<u8> = labels.iter().map(|&l| u8::from(l == c)).collect();
                auc(&scores, &bin)
            })
            .collect();
        (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64)
    });
    Ok(MetricsBundle {
        phase: Phase::Before,
        n: labels.len() as u64,
        accuracy: ratio(correct, labels.len() as u64),
        precision,
        recall,
        auc,
        counts: None,
    })
}
