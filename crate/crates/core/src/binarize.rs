//! Collapse multi-class attribution labels and softmax outputs to
//! real-vs-fake form.

use ndarray::{Array2, ArrayView1};
use thiserror::Error;

/// Tolerance on `|sum(p) - 1|` for a softmax row.
pub const SOFTMAX_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum BinarizeError {
    #[error("row {row}: {reason}")]
    InvalidDistribution { row: usize, reason: String },
    #[error("{predictions} prediction rows but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
}

/// Softmax outputs over `{REAL} ∪ manipulations`, one row per sample.
/// Rows are validated on construction and never renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    probs: Array2<f64>,
}

impl PredictionSet {
    pub fn new(probs: Array2<f64>) -> Result<Self, BinarizeError> {
        for (i, row) in probs.rows().into_iter().enumerate() {
            check_softmax_row(row).map_err(|reason| BinarizeError::InvalidDistribution { row: i, reason })?;
        }
        Ok(PredictionSet { probs })
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn n_rows(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.probs.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.probs.row(i)
    }
}

fn check_softmax_row(row: ArrayView1<'_, f64>) -> Result<(), String> {
    if row.is_empty() {
        return Err("empty softmax row".into());
    }
    if let Some(bad) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(format!("entry {bad} outside [0, 1]"));
    }
    let sum: f64 = row.sum();
    if (sum - 1.0).abs() > SOFTMAX_SUM_TOL {
        return Err(format!("entries sum to {sum}"));
    }
    Ok(())
}

/// Index and value of the largest entry; ties go to the lowest index, so
/// REAL (index 0) wins any tie it takes part in.
pub fn argmax(row: ArrayView1<'_, f64>) -> (usize, f64) {
    let mut best = (0, row[0]);
    for (i, &p) in row.iter().enumerate().skip(1) {
        if p > best.1 {
            best = (i, p);
        }
    }
    best
}

/// 0 for the real class, 1 for any manipulation.
pub fn binarize_label(label: usize) -> u8 {
    u8::from(label != 0)
}

/// Fakeness score of one softmax row.
///
/// When the top class is a manipulation the score is its probability. When
/// the top class is REAL the score is `p_max` below one half and `1 - p_max`
/// from one half up, i.e. `min(p_max, 1 - p_max)`.
pub fn binarize_score(row: ArrayView1<'_, f64>) -> Result<f64, BinarizeError> {
    check_softmax_row(row).map_err(|reason| BinarizeError::InvalidDistribution { row: 0, reason })?;
    Ok(score_unchecked(row))
}

fn score_unchecked(row: ArrayView1<'_, f64>) -> f64 {
    let (j, p_max) = argmax(row);
    if j == 0 && p_max >= 0.5 {
        1.0 - p_max
    } else {
        p_max
    }
}

/// Element-wise binarization of a whole run, order preserving.
pub fn binarize_run(preds: &PredictionSet, labels: &[usize]) -> Result<(Vec<f64>, Vec<u8>), BinarizeError> {
    if preds.n_rows() != labels.len() {
        return Err(BinarizeError::LengthMismatch {
            predictions: preds.n_rows(),
            labels: labels.len(),
        });
    }
    let scores = preds.probs.rows().into_iter().map(score_unchecked).collect();
    let bins = labels.iter().map(|&l| binarize_label(l)).collect();
    Ok((scores, bins))
}
