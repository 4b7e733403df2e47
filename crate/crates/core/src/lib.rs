//! Benchmark engine for cross-dataset DeepFake attribution.
//!
//! Plans experiments over a dataset registry ([`protocol`]), trains
//! attribution heads on frozen face embeddings with optional contrastive
//! objectives ([`contrastive`]), collapses multi-class outputs to detection
//! scores ([`binarize`]) and reports AUC, EER and balanced accuracy
//! ([`metrics`], [`io`]).

pub mod binarize;
pub mod cli;
pub mod contrastive;
pub mod io;
pub mod metrics;
pub mod protocol;
pub mod registry;

pub use binarize::{binarize_label, binarize_run, binarize_score, PredictionSet};
pub use contrastive::{predict, train_head, EmbeddingSet, HeadParams, LossConfig, TrainConfig};
pub use metrics::{auc, balanced_accuracy, eer, manipulation_accuracy, ScoredLabels};
pub use protocol::{
    make_plan, shared_manipulation_triplets, ExperimentCell, ExperimentPlan, LossSetting, Mode,
    PlanRequest, ResearchQuestion,
};
pub use registry::{
    builtin_dataset_descriptors, canonical_manipulation, load_catalog, DatasetDescriptor,
    ManipulationId, SampleCatalog,
};

/// Version string stamped into report records.
pub const TOOL_VERSION: &str = concat!("attribench ", env!("CARGO_PKG_VERSION"));
