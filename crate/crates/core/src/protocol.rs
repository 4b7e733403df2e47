//! Experiment planning for the three research questions: binary vs.
//! multi-class generalization (RQ1), seen manipulations in unseen datasets
//! (RQ2) and contrastive objectives (RQ3).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::registry::{descriptor_names, DatasetDescriptor, ManipulationId};

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("model list is empty")]
    EmptyModelList,
    #[error("unknown loss setting {0:?} (expected b, t-h, t-hs, nt or sc)")]
    UnknownLossSetting(String),
    #[error("RQ3 plans need the baseline setting B among the losses")]
    MissingBaseline,
    #[error("dataset {0:?} is not described")]
    UnknownDataset(String),
    #[error("{0} list is empty")]
    EmptyDatasetList(&'static str),
    #[error("invalid cell: {0}")]
    InvalidCell(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ResearchQuestion {
    #[serde(rename = "RQ1")]
    Rq1,
    #[serde(rename = "RQ2")]
    Rq2,
    #[serde(rename = "RQ3")]
    Rq3,
}

impl FromStr for ResearchQuestion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().trim_start_matches("rq") {
            "1" => Ok(ResearchQuestion::Rq1),
            "2" => Ok(ResearchQuestion::Rq2),
            "3" => Ok(ResearchQuestion::Rq3),
            _ => Err(format!("research question must be 1, 2 or 3, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Binary,
    Multiclass,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Binary => "binary",
            Mode::Multiclass => "multiclass",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(Mode::Binary),
            "multiclass" => Ok(Mode::Multiclass),
            other => Err(format!("mode must be binary or multiclass, got {other:?}")),
        }
    }
}

/// Training objective of an attribution head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LossSetting {
    /// Cross-entropy only.
    #[serde(rename = "B")]
    Baseline,
    /// Triplet loss, hardest positive and hardest negative.
    #[serde(rename = "T-H")]
    TripletHard,
    /// Triplet loss, hardest positive and semi-hard negative.
    #[serde(rename = "T-HS")]
    TripletSemiHard,
    /// NT-Xent over two views through the projection head.
    #[serde(rename = "NT")]
    NtXent,
    /// Supervised contrastive over two views through the projection head.
    #[serde(rename = "SC")]
    SupCon,
}

impl LossSetting {
    pub const ALL: [LossSetting; 5] = [
        LossSetting::Baseline,
        LossSetting::TripletHard,
        LossSetting::TripletSemiHard,
        LossSetting::NtXent,
        LossSetting::SupCon,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            LossSetting::Baseline => "B",
            LossSetting::TripletHard => "T-H",
            LossSetting::TripletSemiHard => "T-HS",
            LossSetting::NtXent => "NT",
            LossSetting::SupCon => "SC",
        }
    }

    pub fn is_triplet(self) -> bool {
        matches!(self, LossSetting::TripletHard | LossSetting::TripletSemiHard)
    }

    pub fn uses_two_views(self) -> bool {
        matches!(self, LossSetting::NtXent | LossSetting::SupCon)
    }
}

impl fmt::Display for LossSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for LossSetting {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "b" => Ok(LossSetting::Baseline),
            "t-h" => Ok(LossSetting::TripletHard),
            "t-hs" => Ok(LossSetting::TripletSemiHard),
            "nt" => Ok(LossSetting::NtXent),
            "sc" => Ok(LossSetting::SupCon),
            _ => Err(ProtocolError::UnknownLossSetting(s.to_string())),
        }
    }
}

/// Parses a comma-separated list of loss settings.
pub fn parse_loss_list(list: &str) -> Result<Vec<LossSetting>, ProtocolError> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// `(train dataset, test dataset, shared manipulation)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ManipulationTriplet {
    pub train: String,
    pub test: String,
    pub manipulation: ManipulationId,
}

/// Every ordered pair of distinct labeled datasets with each manipulation
/// they share, sorted by `(train, test, manipulation)`.
pub fn shared_manipulation_triplets(descriptors: &[DatasetDescriptor]) -> Vec<ManipulationTriplet> {
    let labeled: Vec<&DatasetDescriptor> =
        descriptors.iter().filter(|d| d.has_manipulation_labels).collect();
    let mut out = Vec::new();
    for (i, di) in labeled.iter().enumerate() {
        for (j, dj) in labeled.iter().enumerate() {
            if i == j {
                continue;
            }
            for m in di.manipulations.intersection(&dj.manipulations) {
                out.push(ManipulationTriplet {
                    train: di.name.clone(),
                    test: dj.name.clone(),
                    manipulation: m.clone(),
                });
            }
        }
    }
    out.sort();
    out
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExperimentCell {
    pub rq: ResearchQuestion,
    pub train_dataset: String,
    pub test_dataset: String,
    pub manipulation: Option<ManipulationId>,
    pub mode: Mode,
    pub loss_setting: LossSetting,
    pub model_tag: String,
}

impl ExperimentCell {
    /// A manipulation is present exactly for RQ2 cells, and contrastive
    /// settings only apply to multi-class heads.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.manipulation.is_some() != (self.rq == ResearchQuestion::Rq2) {
            return Err(ProtocolError::InvalidCell(format!(
                "manipulation must be set iff rq = RQ2 ({})",
                self.key()
            )));
        }
        if self.loss_setting != LossSetting::Baseline && self.mode != Mode::Multiclass {
            return Err(ProtocolError::InvalidCell(format!(
                "contrastive setting {} on a binary head ({})",
                self.loss_setting,
                self.key()
            )));
        }
        Ok(())
    }

    /// Stable textual identity, e.g. `RQ2/effnet/FF++/CelebDF/DEEPFAKES/multiclass/B`.
    pub fn key(&self) -> String {
        let rq = match self.rq {
            ResearchQuestion::Rq1 => "RQ1",
            ResearchQuestion::Rq2 => "RQ2",
            ResearchQuestion::Rq3 => "RQ3",
        };
        format!(
            "{rq}/{}/{}/{}/{}/{}/{}",
            self.model_tag,
            self.train_dataset,
            self.test_dataset,
            self.manipulation.as_ref().map_or("-", ManipulationId::as_str),
            self.mode,
            self.loss_setting
        )
    }

    /// Per-cell training seed derived from the plan seed and the cell key.
    /// Cells sharing a training configuration get the same seed, so one
    /// trained head serves every test dataset of that row.
    pub fn training_seed(&self, plan_seed: u64) -> u64 {
        let mut h = Sha256::new();
        h.update(plan_seed.to_le_bytes());
        h.update(self.model_tag.as_bytes());
        h.update([0]);
        h.update(self.train_dataset.as_bytes());
        h.update([0]);
        h.update(self.mode.as_str().as_bytes());
        h.update([0]);
        h.update(self.loss_setting.tag().as_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub seed: u64,
    pub cells: Vec<ExperimentCell>,
}

/// Inputs of [`make_plan`]. Sources and test sets default to the FF++
/// training setup (test on FF++, CelebDF, DFDC); RQ3 losses default to all
/// five settings.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanRequest {
    pub rq: ResearchQuestion,
    pub models: Vec<String>,
    pub losses: Vec<LossSetting>,
    pub sources: Vec<String>,
    pub tests: Vec<String>,
    pub seed: u64,
    /// Adds `(D, D, m)` within-dataset cells to RQ2 plans for every
    /// manipulation `D` shares with another dataset.
    pub include_diagonal: bool,
}

impl PlanRequest {
    pub fn new(rq: ResearchQuestion, models: Vec<String>, seed: u64) -> Self {
        PlanRequest {
            rq,
            models,
            losses: LossSetting::ALL.to_vec(),
            sources: vec!["FF++".into()],
            tests: vec!["FF++".into(), "CelebDF".into(), "DFDC".into()],
            seed,
            include_diagonal: false,
        }
    }

    pub fn losses(mut self, losses: Vec<LossSetting>) -> Self {
        self.losses = losses;
        self
    }

    pub fn sources(mut self, sources: Vec<String>) -> Self {
        self.sources = sources;
        self
    }

    pub fn tests(mut self, tests: Vec<String>) -> Self {
        self.tests = tests;
        self
    }

    pub fn include_diagonal(mut self, yes: bool) -> Self {
        self.include_diagonal = yes;
        self
    }
}

fn dedup_keep_order<T: Clone + Ord>(items: &[T]) -> Vec<T> {
    let mut seen = BTreeSet::new();
    items.iter().filter(|x| seen.insert((*x).clone())).cloned().collect()
}

pub fn make_plan(req: &PlanRequest, descriptors: &[DatasetDescriptor]) -> Result<ExperimentPlan, ProtocolError> {
    let models = dedup_keep_order(&req.models);
    if models.is_empty() {
        return Err(ProtocolError::EmptyModelList);
    }
    let known = descriptor_names(descriptors);
    let check_datasets = |names: &[String], what: &'static str| -> Result<Vec<String>, ProtocolError> {
        let names = dedup_keep_order(names);
        if names.is_empty() {
            return Err(ProtocolError::EmptyDatasetList(what));
        }
        if let Some(bad) = names.iter().find(|n| !known.contains(n.as_str())) {
            return Err(ProtocolError::UnknownDataset(bad.clone()));
        }
        Ok(names)
    };

    let mut cells = Vec::new();
    match req.rq {
        ResearchQuestion::Rq1 => {
            let sources = check_datasets(&req.sources, "source")?;
            let tests = check_datasets(&req.tests, "test")?;
            for model in &models {
                for source in &sources {
                    for mode in [Mode::Binary, Mode::Multiclass] {
                        for test in &tests {
                            cells.push(ExperimentCell {
                                rq: ResearchQuestion::Rq1,
                                train_dataset: source.clone(),
                                test_dataset: test.clone(),
                                manipulation: None,
                                mode,
                                loss_setting: LossSetting::Baseline,
                                model_tag: model.clone(),
                            });
                        }
                    }
                }
            }
        }
        ResearchQuestion::Rq2 => {
            let mut triplets = shared_manipulation_triplets(descriptors);
            if req.include_diagonal {
                let diagonal: BTreeSet<ManipulationTriplet> = triplets
                    .iter()
                    .map(|t| ManipulationTriplet {
                        train: t.train.clone(),
                        test: t.train.clone(),
                        manipulation: t.manipulation.clone(),
                    })
                    .collect();
                triplets.extend(diagonal);
                triplets.sort();
            }
            for model in &models {
                for t in &triplets {
                    cells.push(ExperimentCell {
                        rq: ResearchQuestion::Rq2,
                        train_dataset: t.train.clone(),
                        test_dataset: t.test.clone(),
                        manipulation: Some(t.manipulation.clone()),
                        mode: Mode::Multiclass,
                        loss_setting: LossSetting::Baseline,
                        model_tag: model.clone(),
                    });
                }
            }
        }
        ResearchQuestion::Rq3 => {
            let losses = dedup_keep_order(&req.losses);
            if !losses.contains(&LossSetting::Baseline) {
                return Err(ProtocolError::MissingBaseline);
            }
            let sources = check_datasets(&req.sources, "source")?;
            let tests = check_datasets(&req.tests, "test")?;
            for model in &models {
                for source in &sources {
                    for &loss in &losses {
                        for test in &tests {
                            cells.push(ExperimentCell {
                                rq: ResearchQuestion::Rq3,
                                train_dataset: source.clone(),
                                test_dataset: test.clone(),
                                manipulation: None,
                                mode: Mode::Multiclass,
                                loss_setting: loss,
                                model_tag: model.clone(),
                            });
                        }
                    }
                }
            }
        }
    }
    for c in &cells {
        c.validate()?;
    }
    Ok(ExperimentPlan { seed: req.seed, cells })
}
