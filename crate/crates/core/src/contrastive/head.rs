use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::{ContrastiveError, EmbeddingSet};
use crate::binarize::PredictionSet;
use crate::protocol::Mode;
use crate::registry::ManipulationId;

/// Trainable tensors of a head. [`HeadWeights::flatten`] order is the field
/// order below, each matrix row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    /// `D x D`, residual: `h = e + adapter_w e + adapter_b`.
    pub adapter_w: Array2<f64>,
    pub adapter_b: Array1<f64>,
    /// `(K + 1) x D`.
    pub classifier_w: Array2<f64>,
    pub classifier_b: Array1<f64>,
    /// `H x D`.
    pub proj_w1: Array2<f64>,
    pub proj_b1: Array1<f64>,
    /// `P x H`.
    pub proj_w2: Array2<f64>,
    pub proj_b2: Array1<f64>,
}

/// Output width of the projection head for encoder width `dim`.
pub fn projection_dim(dim: usize) -> usize {
    (dim / 16).max(1)
}

impl HeadWeights {
    pub fn zeros(dim: usize, n_classes: usize) -> Self {
        Self::zeros_with(dim, n_classes, dim, projection_dim(dim))
    }

    fn zeros_with(dim: usize, n_classes: usize, hidden: usize, proj: usize) -> Self {
        HeadWeights {
            adapter_w: Array2::zeros((dim, dim)),
            adapter_b: Array1::zeros(dim),
            classifier_w: Array2::zeros((n_classes, dim)),
            classifier_b: Array1::zeros(n_classes),
            proj_w1: Array2::zeros((hidden, dim)),
            proj_b1: Array1::zeros(hidden),
            proj_w2: Array2::zeros((proj, hidden)),
            proj_b2: Array1::zeros(proj),
        }
    }

    /// Weights from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases and the
    /// adapter zero.
    pub fn init<R: Rng>(dim: usize, n_classes: usize, rng: &mut R) -> Self {
        let mut w = Self::zeros(dim, n_classes);
        let mut fill = |m: &mut Array2<f64>| {
            let bound = 1.0 / (m.ncols() as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            m.iter_mut().for_each(|x| *x = dist.sample(rng));
        };
        fill(&mut w.classifier_w);
        fill(&mut w.proj_w1);
        fill(&mut w.proj_w2);
        w
    }

    pub fn dim(&self) -> usize {
        self.adapter_w.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.classifier_w.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.proj_w1.nrows()
    }

    pub fn proj_dim(&self) -> usize {
        self.proj_w2.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.parts().iter().map(|p| p.len()).sum()
    }

    fn parts(&self) -> [&[f64]; 8] {
        [
            self.adapter_w.as_slice().expect("standard layout"),
            self.adapter_b.as_slice().expect("standard layout"),
            self.classifier_w.as_slice().expect("standard layout"),
            self.classifier_b.as_slice().expect("standard layout"),
            self.proj_w1.as_slice().expect("standard layout"),
            self.proj_b1.as_slice().expect("standard layout"),
            self.proj_w2.as_slice().expect("standard layout"),
            self.proj_b2.as_slice().expect("standard layout"),
        ]
    }

    fn parts_mut(&mut self) -> [&mut [f64]; 8] {
        [
            self.adapter_w.as_slice_mut().expect("standard layout"),
            self.adapter_b.as_slice_mut().expect("standard layout"),
            self.classifier_w.as_slice_mut().expect("standard layout"),
            self.classifier_b.as_slice_mut().expect("standard layout"),
            self.proj_w1.as_slice_mut().expect("standard layout"),
            self.proj_b1.as_slice_mut().expect("standard layout"),
            self.proj_w2.as_slice_mut().expect("standard layout"),
            self.proj_b2.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.parts().concat()
    }

    pub fn from_flat(
        dim: usize,
        n_classes: usize,
        hidden: usize,
        proj: usize,
        values: &[f64],
    ) -> Result<Self, ContrastiveError> {
        let mut w = Self::zeros_with(dim, n_classes, hidden, proj);
        let expected = w.param_count();
        if values.len() != expected {
            return Err(ContrastiveError::DimensionMismatch { expected, got: values.len() });
        }
        let mut offset = 0;
        for part in w.parts_mut() {
            part.copy_from_slice(&values[offset..offset + part.len()]);
            offset += part.len();
        }
        Ok(w)
    }

    /// `self += alpha * other`.
    pub fn scaled_add(&mut self, alpha: f64, other: &HeadWeights) {
        for (dst, src) in self.parts_mut().into_iter().zip(other.parts()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += alpha * s);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for part in self.parts_mut() {
            part.iter_mut().for_each(|x| *x *= alpha);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.parts().iter().all(|p| p.iter().all(|x| x.is_finite()))
    }

    pub(crate) fn zero_adapter(&mut self) {
        self.adapter_w.fill(0.0);
        self.adapter_b.fill(0.0);
    }

    /// Adapted encoder features of each row of `x`.
    pub fn features(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h = x.dot(&self.adapter_w.t());
        h += &x;
        h += &self.adapter_b;
        h
    }

    pub fn logits(&self, features: ArrayView2<'_, f64>) -> Array2<f64> {
        features.dot(&self.classifier_w.t()) + &self.classifier_b
    }

    /// Returns the hidden pre-activation and the projection output.
    pub(crate) fn projection_forward(&self, features: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
        let pre = features.dot(&self.proj_w1.t()) + &self.proj_b1;
        let hidden = pre.mapv(|v| v.max(0.0));
        let out = hidden.dot(&self.proj_w2.t()) + &self.proj_b2;
        (pre, out)
    }
}

/// A trained head: weights plus the class order its logits follow.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub mode: Mode,
    /// Name of each output class; index 0 is always REAL.
    pub label_order: Vec<ManipulationId>,
    pub weights: HeadWeights,
}

impl HeadParams {
    pub fn dim(&self) -> usize {
        self.weights.dim()
    }
}

/// Projection MLP applied to one feature vector.
pub fn project(e: ArrayView1<'_, f64>, w: &HeadWeights) -> Result<Array1<f64>, ContrastiveError> {
    if e.len() != w.proj_w1.ncols() {
        return Err(ContrastiveError::DimensionMismatch { expected: w.proj_w1.ncols(), got: e.len() });
    }
    let hidden = (w.proj_w1.dot(&e) + &w.proj_b1).mapv(|v| v.max(0.0));
    Ok(w.proj_w2.dot(&hidden) + &w.proj_b2)
}

pub(crate) fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Class probabilities for every row of `x`; the projection head is not used.
pub(crate) fn predict_matrix(x: ArrayView2<'_, f64>, w: &HeadWeights) -> Result<PredictionSet, ContrastiveError> {
    if x.ncols() != w.dim() {
        return Err(ContrastiveError::DimensionMismatch { expected: w.dim(), got: x.ncols() });
    }
    let feats = w.features(x);
    Ok(PredictionSet::new(softmax_rows(&w.logits(feats.view())))?)
}

pub fn predict(emb: &EmbeddingSet, head: &HeadParams) -> Result<PredictionSet, ContrastiveError> {
    predict_matrix(emb.to_f64().view(), &head.weights)
}
