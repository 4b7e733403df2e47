//! Attribution heads trained over frozen encoder embeddings, with optional
//! triplet, NT-Xent or supervised-contrastive terms alongside cross-entropy.
//!
//! A head has three parts:
//!
//! * a residual linear adapter `h = e + A e + a` (zero-initialised, so it
//!   starts as the identity) standing in for the trainable top of the encoder,
//! * the classifier, an affine map from `h` to `K + 1` logits,
//! * a projection MLP (`D -> D -> max(1, D / 16)` with ReLU) used only by the
//!   contrastive term during training and ignored by [`predict`].
//!
//! All gradients are analytic; `tests/gradients.rs` checks them against
//! central finite differences.

mod head;
mod loss;
mod mining;
mod train;
mod views;

pub use head::{predict, project, HeadParams, HeadWeights};
pub use loss::{
    batch_triplet_loss, ntxent_loss, softmax_cross_entropy, supcon_loss, triplet_loss, LossGrad,
    TripletLoss,
};
pub use mining::{mine_triplets, MiningStrategy, Triplet};
pub use train::{
    label_order_for, objective, train_head, Batch, ContrastiveTarget, EpochLog, Objective,
    TrainingLog,
};
pub use views::{feature_std, make_views};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binarize::BinarizeError;
use crate::protocol::LossSetting;

/// Smallest embedding width accepted for training: the projection output is
/// `D / 16`.
pub const MIN_EMBEDDING_DIM: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum ContrastiveError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("row {0} is a zero vector")]
    ZeroVector(usize),
    #[error("bad pair map: {0}")]
    BadPairMap(String),
    #[error("anchor {0} has no positive")]
    AnchorWithoutPositive(usize),
    #[error("no anchor has both a positive and a negative")]
    NoValidTriplets,
    #[error("catalog has no training rows")]
    EmptyTrainSplit,
    #[error("could not draw a minable batch after {0} attempts")]
    MaxResample(usize),
    #[error("non-finite loss at epoch {epoch}, step {step} (ce = {ce}, contrastive = {con})")]
    NonFiniteLoss { epoch: usize, step: usize, ce: f64, con: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite embedding value at row {row}, column {col}")]
    NonFiniteEmbedding { row: usize, col: usize },
    #[error("embedding width {0} is below {MIN_EMBEDDING_DIM}")]
    EmbeddingTooNarrow(usize),
    #[error(transparent)]
    Prediction(#[from] BinarizeError),
}

/// Encoder outputs, one row per catalog `row_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    data: Array2<f32>,
}

impl EmbeddingSet {
    pub fn new(data: Array2<f32>) -> Result<Self, ContrastiveError> {
        if data.ncols() < MIN_EMBEDDING_DIM {
            return Err(ContrastiveError::EmbeddingTooNarrow(data.ncols()));
        }
        if let Some(((row, col), _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(ContrastiveError::NonFiniteEmbedding { row, col });
        }
        Ok(EmbeddingSet { data })
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<f32> {
        self.data
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.data.mapv(f64::from)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub setting: LossSetting,
    /// Triplet margin on squared distances.
    pub margin: f64,
    pub temperature: f64,
    /// Weight of the contrastive term in `ce + lambda * contrastive`.
    pub lambda: f64,
    pub views: usize,
    /// Route triplet losses through the projection head instead of the
    /// adapted encoder features.
    pub triplet_through_projection: bool,
}

impl LossConfig {
    pub fn new(setting: LossSetting) -> Self {
        LossConfig {
            setting,
            margin: 0.2,
            temperature: 0.1,
            lambda: 1.0,
            views: if setting.uses_two_views() { 2 } else { 1 },
            triplet_through_projection: false,
        }
    }

    pub fn validate(&self) -> Result<(), ContrastiveError> {
        let bad = |m: String| Err(ContrastiveError::InvalidConfig(m));
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        let needed = if self.setting.uses_two_views() { 2 } else { 1 };
        if self.views != needed {
            return bad(format!("setting {} needs views = {needed}, got {}", self.setting, self.views));
        }
        Ok(())
    }

    /// Whether the contrastive term contributes to training at all.
    pub fn has_contrastive_term(&self) -> bool {
        self.setting != LossSetting::Baseline && self.lambda > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

impl LrSchedule {
    pub fn as_str(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        }
    }

    /// Learning rate for a 0-based epoch.
    pub fn rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let t = epoch as f64 / epochs.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// View noise, in units of each feature's training-set std.
    pub view_noise_sigma: f64,
    pub view_dropout_p: f64,
    pub schedule: LrSchedule,
    /// Redraws allowed per step when a batch cannot be mined.
    pub max_resample: usize,
    /// Train the residual adapter. When false the adapter stays the identity.
    pub train_adapter: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 20,
            learning_rate: 1e-3,
            momentum: 0.9,
            seed: 0,
            view_noise_sigma: 0.05,
            view_dropout_p: 0.1,
            schedule: LrSchedule::Constant,
            max_resample: 100,
            train_adapter: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, setting: LossSetting) -> Result<(), ContrastiveError> {
        let bad = |m: String| Err(ContrastiveError::InvalidConfig(m));
        let min_batch = if setting == LossSetting::Baseline { 1 } else { 4 };
        if self.batch_size < min_batch {
            return bad(format!("batch_size must be at least {min_batch} for {setting}"));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.view_noise_sigma >= 0.0 && self.view_noise_sigma.is_finite()) {
            return bad(format!("view_noise_sigma must be non-negative, got {}", self.view_noise_sigma));
        }
        if !(0.0..1.0).contains(&self.view_dropout_p) {
            return bad(format!("view_dropout_p must be in [0, 1), got {}", self.view_dropout_p));
        }
        if self.max_resample == 0 {
            return bad("max_resample must be positive".into());
        }
        Ok(())
    }
}
