//! Detection and attribution metrics: ROC AUC, equal error rate, balanced
//! accuracy and per-manipulation accuracy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binarize::{argmax, PredictionSet};
use crate::registry::{ManipulationId, SampleCatalog, Split};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("need at least one positive and one negative (got {positives} / {negatives})")]
    DegenerateClasses { positives: usize, negatives: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("class {0} has no true members")]
    EmptyClass(usize),
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
    #[error("label at index {0} is not 0 or 1")]
    BadLabel(usize),
    #[error("manipulation {0} is not among the trained classes")]
    TargetNotTrained(ManipulationId),
    #[error("no test rows labeled {0}")]
    NoSamples(ManipulationId),
}

/// Scores paired with binary labels (1 = fake).
#[derive(Debug, Clone, Copy)]
pub struct ScoredLabels<'a> {
    scores: &'a [f64],
    labels: &'a [u8],
    positives: usize,
}

impl<'a> ScoredLabels<'a> {
    pub fn new(scores: &'a [f64], labels: &'a [u8]) -> Result<Self, MetricsError> {
        if scores.len() != labels.len() {
            return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
        }
        if scores.is_empty() {
            return Err(MetricsError::EmptyInput);
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(MetricsError::NonFiniteScore(i));
        }
        if let Some(i) = labels.iter().position(|&l| l > 1) {
            return Err(MetricsError::BadLabel(i));
        }
        let positives = labels.iter().filter(|&&l| l == 1).count();
        Ok(ScoredLabels { scores, labels, positives })
    }

    pub fn n_pos(&self) -> usize {
        self.positives
    }

    pub fn n_neg(&self) -> usize {
        self.labels.len() - self.positives
    }

    fn require_both(&self) -> Result<(), MetricsError> {
        if self.n_pos() == 0 || self.n_neg() == 0 {
            return Err(MetricsError::DegenerateClasses {
                positives: self.n_pos(),
                negatives: self.n_neg(),
            });
        }
        Ok(())
    }

    /// Distinct scores in descending order with (positive, negative) counts.
    fn tie_groups(&self) -> Vec<(f64, usize, usize)> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut groups: Vec<(f64, usize, usize)> = Vec::new();
        for i in order {
            let s = self.scores[i];
            let pos = usize::from(self.labels[i] == 1);
            match groups.last_mut() {
                Some(g) if g.0 == s => {
                    g.1 += pos;
                    g.2 += 1 - pos;
                }
                _ => groups.push((s, pos, 1 - pos)),
            }
        }
        groups
    }
}

/// Mann-Whitney AUC: `(wins + ties / 2) / (n_pos * n_neg)`.
pub fn auc(sl: &ScoredLabels<'_>) -> Result<f64, MetricsError> {
    sl.require_both()?;
    let mut neg_below = sl.n_neg() as f64;
    let mut wins = 0.0;
    let mut ties = 0.0;
    for (_, pos, neg) in sl.tie_groups() {
        neg_below -= neg as f64;
        wins += pos as f64 * neg_below;
        ties += pos as f64 * neg as f64;
    }
    Ok((wins + 0.5 * ties) / (sl.n_pos() as f64 * sl.n_neg() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
}

/// Equal error rate on the ROC polyline.
///
/// Every distinct score is a threshold (fake when `score >= t`); the curve
/// starts at (0, 0) for a threshold above every score. The crossing of
/// `FPR = 1 - TPR` is linearly interpolated between adjacent ROC points, and
/// so is the threshold. On the first segment, whose start has no finite
/// threshold, the segment's end score is reported.
pub fn eer(sl: &ScoredLabels<'_>) -> Result<Eer, MetricsError> {
    sl.require_both()?;
    let (np, nn) = (sl.n_pos() as f64, sl.n_neg() as f64);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_threshold: Option<f64> = None;
    let mut prev_gap = -1.0; // fpr - fnr at (0, 0)
    let mut prev_fpr = 0.0;
    for (score, pos, neg) in sl.tie_groups() {
        tp += pos;
        fp += neg;
        let fpr = fp as f64 / nn;
        let fnr = 1.0 - tp as f64 / np;
        let gap = fpr - fnr;
        if gap >= 0.0 {
            if gap == 0.0 {
                return Ok(Eer { eer: fpr, threshold: score });
            }
            let alpha = -prev_gap / (gap - prev_gap);
            let rate = prev_fpr + alpha * (fpr - prev_fpr);
            let threshold = match prev_threshold {
                Some(t0) => t0 + alpha * (score - t0),
                None => score,
            };
            return Ok(Eer { eer: rate, threshold });
        }
        prev_threshold = Some(score);
        prev_gap = gap;
        prev_fpr = fpr;
    }
    unreachable!("the last ROC point is (1, 1), where fpr - fnr = 1")
}

/// Unweighted mean recall over the classes present in `true_labels`.
pub fn balanced_accuracy<T: Ord + Copy>(pred: &[T], truth: &[T]) -> Result<f64, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), truth.len()));
    }
    if truth.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut per_class: BTreeMap<T, (usize, usize)> = BTreeMap::new();
    for (p, t) in pred.iter().zip(truth) {
        let e = per_class.entry(*t).or_default();
        e.0 += usize::from(p == t);
        e.1 += 1;
    }
    let sum: f64 = per_class.values().map(|&(hit, n)| hit as f64 / n as f64).sum();
    Ok(sum / per_class.len() as f64)
}

/// Balanced accuracy over an explicit class list; a listed class with no
/// true members is an error.
pub fn balanced_accuracy_over(pred: &[usize], truth: &[usize], classes: &[usize]) -> Result<f64, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), truth.len()));
    }
    if classes.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut sum = 0.0;
    for &c in classes {
        let members = truth.iter().filter(|&&t| t == c).count();
        if members == 0 {
            return Err(MetricsError::EmptyClass(c));
        }
        let hits = pred.iter().zip(truth).filter(|&(&p, &t)| t == c && p == c).count();
        sum += hits as f64 / members as f64;
    }
    Ok(sum / classes.len() as f64)
}

/// Balanced accuracy of binary fakeness scores, predicting fake when
/// `score >= threshold`.
pub fn balanced_accuracy_at(sl: &ScoredLabels<'_>, threshold: f64) -> Result<f64, MetricsError> {
    let pred: Vec<u8> = sl.scores.iter().map(|&s| u8::from(s >= threshold)).collect();
    balanced_accuracy(&pred, sl.labels)
}

/// Fraction of the catalog's test rows labeled `target` whose argmax class
/// is `target`. `label_order[k]` names softmax column `k`; prediction row
/// `r` aligns with catalog `row_index` `r`.
pub fn manipulation_accuracy(
    preds: &PredictionSet,
    catalog: &SampleCatalog,
    target: &ManipulationId,
    label_order: &[ManipulationId],
) -> Result<f64, MetricsError> {
    let target_idx = label_order
        .iter()
        .position(|m| m == target)
        .ok_or_else(|| MetricsError::TargetNotTrained(target.clone()))?;
    if preds.n_rows() != catalog.len() {
        return Err(MetricsError::LengthMismatch(preds.n_rows(), catalog.len()));
    }
    if preds.n_classes() != label_order.len() {
        return Err(MetricsError::LengthMismatch(preds.n_classes(), label_order.len()));
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for row in catalog.split_rows(Split::Test).filter(|r| &r.label == target) {
        total += 1;
        hits += usize::from(argmax(preds.row(row.row_index)).0 == target_idx);
    }
    if total == 0 {
        return Err(MetricsError::NoSamples(target.clone()));
    }
    Ok(hits as f64 / total as f64)
}

/// Binary detection metrics of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub auc: f64,
    pub eer: f64,
    pub eer_threshold: f64,
    pub ba: f64,
    pub n_real: usize,
    pub n_fake: usize,
}

/// AUC, EER and balanced accuracy at `ba_threshold`.
pub fn detection_metrics(sl: &ScoredLabels<'_>, ba_threshold: f64) -> Result<DetectionMetrics, MetricsError> {
    let e = eer(sl)?;
    Ok(DetectionMetrics {
        auc: auc(sl)?,
        eer: e.eer,
        eer_threshold: e.threshold,
        ba: balanced_accuracy_at(sl, ba_threshold)?,
        n_real: sl.n_neg(),
        n_fake: sl.n_pos(),
    })
}
