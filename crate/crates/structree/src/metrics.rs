//! Classification metrics: confusion matrix, accuracy, macro F1, and a
//! rank-based AUC. Degenerate slices (0/0) count as zero rather than NaN so
//! macro F1 stays defined when a class never appears.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no observations")]
    Empty,
    #[error("label {label} outside {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("probability row of {got} entries for {classes} classes")]
    RowWidth { got: usize, classes: usize },
    #[error("auc needs at least one positive and one negative")]
    OneClass,
    #[error("non-finite score")]
    BadScore,
}

/// Index of the largest entry, first one on ties. Panics on empty input.
pub fn argmax(xs: &[f64]) -> usize {
    assert!(!xs.is_empty(), "argmax of empty slice");
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Counts indexed `[true class][predicted class]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_pairs(classes: usize, pairs: &[(usize, usize)]) -> Result<Self, MetricError> {
        let mut cm = ConfusionMatrix::new(classes);
        for (truth, pred) in pairs {
            cm.observe(*truth, *pred)?;
        }
        Ok(cm)
    }

    pub fn observe(&mut self, truth: usize, pred: usize) -> Result<(), MetricError> {
        for label in [truth, pred] {
            if label >= self.classes {
                return Err(MetricError::LabelOutOfRange { label, classes: self.classes });
            }
        }
        self.counts[truth * self.classes + pred] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Rows as plain vectors, for serialization.
    pub fn rows(&self) -> Vec<Vec<u64>> {
        (0..self.classes)
            .map(|t| (0..self.classes).map(|p| self.count(t, p)).collect())
            .collect()
    }

    pub fn accuracy(&self) -> Result<f64, MetricError> {
        let total = self.total();
        if total == 0 {
            return Err(MetricError::Empty);
        }
        let hits: u64 = (0..self.classes).map(|k| self.count(k, k)).sum();
        Ok(hits as f64 / total as f64)
    }

    /// Unweighted mean of per-class F1; every class counts, observed or not.
    pub fn macro_f1(&self) -> Result<f64, MetricError> {
        if self.total() == 0 {
            return Err(MetricError::Empty);
        }
        let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
        let mut sum = 0.0;
        for k in 0..self.classes {
            let tp = self.count(k, k) as f64;
            let row: f64 = (0..self.classes).map(|p| self.count(k, p) as f64).sum();
            let col: f64 = (0..self.classes).map(|t| self.count(t, k) as f64).sum();
            let precision = ratio(tp, col);
            let recall = ratio(tp, row);
            sum += ratio(2.0 * precision * recall, precision + recall);
        }
        Ok(sum / self.classes as f64)
    }
}

/// Area under the ROC curve via the rank statistic: tied scores share their
/// average rank, which scores each tied positive-negative pair as one half.
pub fn auc(scores: &[(f64, bool)]) -> Result<f64, MetricError> {
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    if scores.iter().any(|(s, _)| !s.is_finite()) {
        return Err(MetricError::BadScore);
    }
    let n_pos = scores.iter().filter(|(_, p)| *p).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::OneClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.partial_cmp(&scores[b].0).expect("finite scores"));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]].0 == scores[order[i]].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j averaged across the tie group.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if scores[idx].1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let n_pos = n_pos as f64;
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as f64))
}

/// Everything an evaluation run reports, JSON-ready.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub macro_f1: f64,
    pub accuracy: f64,
    /// Present only for two-class problems with both classes observed.
    pub auc: Option<f64>,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    /// Score predictions given per-document class probabilities. AUC uses the
    /// probability of class 1 and is omitted (with a warning) when the truth
    /// covers a single class.
    pub fn from_probs(
        labels: &[usize],
        probs: &[Vec<f64>],
        classes: usize,
    ) -> Result<MetricsReport, MetricError> {
        if labels.is_empty() || labels.len() != probs.len() {
            return Err(MetricError::Empty);
        }
        let mut cm = ConfusionMatrix::new(classes);
        for (truth, row) in labels.iter().zip(probs) {
            if row.len() != classes {
                return Err(MetricError::RowWidth { got: row.len(), classes });
            }
            cm.observe(*truth, argmax(row))?;
        }
        let auc_value = if classes == 2 {
            let scored: Vec<(f64, bool)> =
                labels.iter().zip(probs).map(|(t, row)| (row[1], *t == 1)).collect();
            match auc(&scored) {
                Ok(a) => Some(a),
                Err(MetricError::OneClass) => {
                    log::warn!("auc omitted: evaluation slice holds a single class");
                    None
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        Ok(MetricsReport {
            macro_f1: cm.macro_f1()?,
            accuracy: cm.accuracy()?,
            auc: auc_value,
            confusion: cm.rows(),
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
