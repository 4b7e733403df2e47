//! Canonical manipulation and dataset naming, plus the per-frame sample catalog.
//!
//! Manipulation names are folded through a data-driven alias table
//! (`data/aliases.txt`) so that "Face2Face", "face_2_face" and "F2F" all
//! resolve to the same [`ManipulationId`]. Datasets are described by
//! [`DatasetDescriptor`]s, loaded from a tab-separated descriptor file.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUILTIN_ALIASES: &str = include_str!("../data/aliases.txt");
const BUILTIN_DATASETS: &str = include_str!("../data/datasets.tsv");

/// Column order of the catalog CSV.
pub const CATALOG_HEADER: [&str; 7] = [
    "sample_id",
    "dataset",
    "video_id",
    "frame_idx",
    "split",
    "label",
    "row_index",
];

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("unknown manipulation {0:?}")]
    UnknownManipulation(String),
    #[error("alias table line {line}: {reason}")]
    BadAliasLine { line: usize, reason: String },
    #[error("descriptor line {line}: {reason}")]
    BadDescriptor { line: usize, reason: String },
    #[error("dataset {dataset}: {reason}")]
    DescriptorInvariant { dataset: String, reason: String },
    #[error("catalog parse error at line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error("catalog invariant violated at data row {row}: {kind}")]
    InvariantViolation { kind: ViolationKind, row: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Which catalog invariant a row broke.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    DuplicateRowIndex(usize),
    RowIndexOutOfRange { row_index: usize, n_rows: usize },
    SplitMixing { dataset: String, video_id: String },
    LabelNotInDataset { dataset: String, label: ManipulationId },
    UnknownDataset(String),
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::DuplicateRowIndex(i) => write!(f, "duplicate row_index {i}"),
            ViolationKind::RowIndexOutOfRange { row_index, n_rows } => {
                write!(f, "row_index {row_index} outside 0..{n_rows}")
            }
            ViolationKind::SplitMixing { dataset, video_id } => {
                write!(f, "video {dataset}/{video_id} appears in both splits")
            }
            ViolationKind::LabelNotInDataset { dataset, label } => {
                write!(f, "label {label} is not a manipulation of {dataset}")
            }
            ViolationKind::UnknownDataset(name) => write!(f, "unknown dataset {name:?}"),
        }
    }
}

/// Canonical name of a manipulation method, or `REAL`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ManipulationId(String);

impl ManipulationId {
    pub const REAL: &'static str = "REAL";
    pub const UNKNOWN_FAKE: &'static str = "UNKNOWN_FAKE";

    pub fn real() -> Self {
        ManipulationId(Self::REAL.to_string())
    }

    pub fn unknown_fake() -> Self {
        ManipulationId(Self::UNKNOWN_FAKE.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_real(&self) -> bool {
        self.0 == Self::REAL
    }

    pub fn is_fake(&self) -> bool {
        !self.is_real()
    }
}

impl fmt::Display for ManipulationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for ManipulationId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for ManipulationId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        canonical_manipulation(&raw).map_err(serde::de::Error::custom)
    }
}

/// Lowercase, alphanumeric-only lookup key.
fn fold_key(raw: &str) -> String {
    raw.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

fn is_canonical_form(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

/// Alias table mapping folded spellings to canonical ids.
#[derive(Debug, Clone)]
pub struct ManipulationRegistry {
    lookup: HashMap<String, ManipulationId>,
    canonical: BTreeSet<ManipulationId>,
}

static BUILTIN_REGISTRY: Lazy<ManipulationRegistry> = Lazy::new(|| {
    ManipulationRegistry::from_alias_text(BUILTIN_ALIASES).expect("builtin alias table is valid")
});

impl ManipulationRegistry {
    /// The registry shipped with the crate.
    pub fn builtin() -> &'static ManipulationRegistry {
        &BUILTIN_REGISTRY
    }

    pub fn from_alias_text(text: &str) -> Result<Self, RegistryError> {
        let mut reg = ManipulationRegistry {
            lookup: HashMap::new(),
            canonical: BTreeSet::new(),
        };
        reg.extend_from_text(text)?;
        if !reg.canonical.contains(&ManipulationId::real())
            || !reg.canonical.contains(&ManipulationId::unknown_fake())
        {
            return Err(RegistryError::BadAliasLine {
                line: 0,
                reason: "alias table must define REAL and UNKNOWN_FAKE".into(),
            });
        }
        Ok(reg)
    }

    /// Adds entries from another alias file. An alias already bound to a
    /// different canonical name is an error.
    pub fn extend_from_text(&mut self, text: &str) -> Result<(), RegistryError> {
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (name, aliases) = match line.split_once('\t') {
                Some((n, a)) => (n.trim(), a),
                None => (line.trim(), ""),
            };
            if !is_canonical_form(name) {
                return Err(RegistryError::BadAliasLine {
                    line: lineno,
                    reason: format!("canonical name {name:?} must be upper-case [A-Z0-9_]"),
                });
            }
            let id = ManipulationId(name.to_string());
            let keys = std::iter::once(name)
                .chain(aliases.split(',').map(str::trim).filter(|a| !a.is_empty()));
            for alias in keys {
                let key = fold_key(alias);
                if key.is_empty() {
                    return Err(RegistryError::BadAliasLine {
                        line: lineno,
                        reason: format!("alias {alias:?} has no alphanumeric characters"),
                    });
                }
                match self.lookup.get(&key) {
                    Some(existing) if existing != &id => {
                        return Err(RegistryError::BadAliasLine {
                            line: lineno,
                            reason: format!("alias {alias:?} already maps to {existing}"),
                        });
                    }
                    _ => {
                        self.lookup.insert(key, id.clone());
                    }
                }
            }
            self.canonical.insert(id);
        }
        Ok(())
    }

    pub fn canonicalize(&self, raw: &str) -> Result<ManipulationId, RegistryError> {
        self.lookup
            .get(&fold_key(raw))
            .cloned()
            .ok_or_else(|| RegistryError::UnknownManipulation(raw.to_string()))
    }

    pub fn canonical_ids(&self) -> impl Iterator<Item = &ManipulationId> {
        self.canonical.iter()
    }
}

/// Resolves a raw manipulation name against the builtin alias table.
pub fn canonical_manipulation(raw: &str) -> Result<ManipulationId, RegistryError> {
    ManipulationRegistry::builtin().canonicalize(raw)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub manipulations: BTreeSet<ManipulationId>,
    pub has_manipulation_labels: bool,
}

impl DatasetDescriptor {
    /// Builds a descriptor, enforcing that the set holds only fakes and that
    /// unlabeled datasets carry exactly `{UNKNOWN_FAKE}`.
    pub fn new(
        name: impl Into<String>,
        manipulations: impl IntoIterator<Item = ManipulationId>,
        has_manipulation_labels: bool,
    ) -> Result<Self, RegistryError> {
        let name = name.into();
        let mut set: BTreeSet<ManipulationId> = manipulations.into_iter().collect();
        let invariant = |reason: &str| RegistryError::DescriptorInvariant {
            dataset: name.clone(),
            reason: reason.to_string(),
        };
        if name.is_empty() || name.contains(['\t', '\n', ',']) {
            return Err(invariant("name must be non-empty without tabs, commas or newlines"));
        }
        if set.contains(&ManipulationId::real()) {
            return Err(invariant("REAL cannot be listed as a manipulation"));
        }
        if has_manipulation_labels {
            if set.is_empty() {
                return Err(invariant("labeled dataset needs at least one manipulation"));
            }
            if set.contains(&ManipulationId::unknown_fake()) {
                return Err(invariant("UNKNOWN_FAKE is reserved for unlabeled datasets"));
            }
        } else {
            if set.iter().any(|m| m.as_str() != ManipulationId::UNKNOWN_FAKE) {
                return Err(invariant("unlabeled dataset can only hold UNKNOWN_FAKE"));
            }
            set.insert(ManipulationId::unknown_fake());
        }
        Ok(DatasetDescriptor {
            name,
            manipulations: set,
            has_manipulation_labels,
        })
    }

    pub fn admits_label(&self, label: &ManipulationId) -> bool {
        label.is_real() || self.manipulations.contains(label)
    }
}

/// Parses the descriptor file format:
/// `name<TAB>labeled<TAB>comma-separated-manipulations`, where `labeled` is
/// `0`/`1` (the prefixed forms `labeled:0`/`labeled:1` are also accepted).
pub fn parse_descriptors(
    text: &str,
    registry: &ManipulationRegistry,
) -> Result<Vec<DatasetDescriptor>, RegistryError> {
    let mut out: Vec<DatasetDescriptor> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| RegistryError::BadDescriptor {
            line: lineno,
            reason,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 tab-separated fields, got {}", fields.len())));
        }
        let labeled = match fields[1].trim().trim_start_matches("labeled:") {
            "1" => true,
            "0" => false,
            other => return Err(bad(format!("labeled flag must be 0 or 1, got {other:?}"))),
        };
        let manipulations = fields[2]
            .split(',')
            .map(str::trim)
            .filter(|m| !m.is_empty())
            .map(|m| registry.canonicalize(m))
            .collect::<Result<Vec<_>, _>>()?;
        let desc = DatasetDescriptor::new(fields[0].trim(), manipulations, labeled)?;
        if out.iter().any(|d| d.name == desc.name) {
            return Err(bad(format!("dataset {} listed twice", desc.name)));
        }
        out.push(desc);
    }
    Ok(out)
}

pub fn format_descriptors(descriptors: &[DatasetDescriptor]) -> String {
    let mut s = String::new();
    for d in descriptors {
        let names: Vec<&str> = d.manipulations.iter().map(ManipulationId::as_str).collect();
        s.push_str(&format!(
            "{}\t{}\t{}\n",
            d.name,
            u8::from(d.has_manipulation_labels),
            names.join(",")
        ));
    }
    s
}

pub fn load_descriptors(path: impl AsRef<Path>) -> Result<Vec<DatasetDescriptor>, RegistryError> {
    let text = std::fs::read_to_string(path)?;
    parse_descriptors(&text, ManipulationRegistry::builtin())
}

/// The six benchmark datasets: FF++, CelebDF, FakeAVCeleb, DFDC, ForgeryNet
/// and DFPlatter. ForgeryNet lists only DeepFakes, FaceShifter and FSGAN.
pub fn builtin_dataset_descriptors() -> Vec<DatasetDescriptor> {
    parse_descriptors(BUILTIN_DATASETS, ManipulationRegistry::builtin())
        .expect("builtin descriptor table is valid")
}

/// Row of the dataset overview table: video counts as published with each
/// dataset, kept as text because several are approximate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetOverview {
    pub name: &'static str,
    pub real_videos: &'static str,
    pub fake_videos: &'static str,
    pub manipulation_count: u32,
}

pub const DATASET_OVERVIEW: [DatasetOverview; 6] = [
    DatasetOverview { name: "FF++", real_videos: "1000", fake_videos: "1000/type", manipulation_count: 5 },
    DatasetOverview { name: "CelebDF", real_videos: "590", fake_videos: "5639", manipulation_count: 1 },
    DatasetOverview { name: "FakeAVCeleb", real_videos: "500", fake_videos: "19.5K", manipulation_count: 4 },
    DatasetOverview { name: "DFDC", real_videos: "~24K", fake_videos: "~105K", manipulation_count: 1 },
    DatasetOverview { name: "ForgeryNet", real_videos: "~100K", fake_videos: "~120K", manipulation_count: 8 },
    DatasetOverview { name: "DFPlatter", real_videos: "764", fake_videos: "~133K", manipulation_count: 3 },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("split must be train or test, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogRow {
    pub sample_id: String,
    pub dataset: String,
    pub video_id: String,
    pub frame_idx: u64,
    pub split: Split,
    pub label: ManipulationId,
    pub row_index: usize,
}

/// Validated per-frame catalog. `row_index` is the alignment key into the
/// embedding matrix; rows keep their file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleCatalog {
    rows: Vec<CatalogRow>,
    position_of_index: Vec<usize>,
}

impl SampleCatalog {
    pub fn new(rows: Vec<CatalogRow>, descriptors: &[DatasetDescriptor]) -> Result<Self, RegistryError> {
        let n = rows.len();
        let by_name: HashMap<&str, &DatasetDescriptor> =
            descriptors.iter().map(|d| (d.name.as_str(), d)).collect();
        let mut position_of_index = vec![usize::MAX; n];
        let mut video_split: HashMap<(&str, &str), Split> = HashMap::new();
        let violation = |kind, row| RegistryError::InvariantViolation { kind, row };

        for (pos, row) in rows.iter().enumerate() {
            let desc = by_name
                .get(row.dataset.as_str())
                .ok_or_else(|| violation(ViolationKind::UnknownDataset(row.dataset.clone()), pos))?;
            if !desc.admits_label(&row.label) {
                return Err(violation(
                    ViolationKind::LabelNotInDataset {
                        dataset: row.dataset.clone(),
                        label: row.label.clone(),
                    },
                    pos,
                ));
            }
            if row.row_index >= n {
                return Err(violation(
                    ViolationKind::RowIndexOutOfRange { row_index: row.row_index, n_rows: n },
                    pos,
                ));
            }
            if position_of_index[row.row_index] != usize::MAX {
                return Err(violation(ViolationKind::DuplicateRowIndex(row.row_index), pos));
            }
            position_of_index[row.row_index] = pos;
            let split = video_split
                .entry((row.dataset.as_str(), row.video_id.as_str()))
                .or_insert(row.split);
            if *split != row.split {
                return Err(violation(
                    ViolationKind::SplitMixing {
                        dataset: row.dataset.clone(),
                        video_id: row.video_id.clone(),
                    },
                    pos,
                ));
            }
        }
        Ok(SampleCatalog { rows, position_of_index })
    }

    pub fn rows(&self) -> &[CatalogRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row aligned with embedding row `row_index`.
    pub fn by_row_index(&self, row_index: usize) -> Option<&CatalogRow> {
        self.position_of_index.get(row_index).map(|&p| &self.rows[p])
    }

    pub fn split_rows(&self, split: Split) -> impl Iterator<Item = &CatalogRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// Distinct dataset names of one split, sorted.
    pub fn datasets_in(&self, split: Split) -> Vec<String> {
        let set: BTreeSet<&str> = self.split_rows(split).map(|r| r.dataset.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn read_from<R: Read>(
        reader: R,
        registry: &ManipulationRegistry,
        descriptors: &[DatasetDescriptor],
    ) -> Result<Self, RegistryError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| RegistryError::Parse { line: 1, reason: e.to_string() })?
            .clone();
        if header.iter().ne(CATALOG_HEADER.iter().copied()) {
            return Err(RegistryError::Parse {
                line: 1,
                reason: format!("header must be {}", CATALOG_HEADER.join(",")),
            });
        }
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| RegistryError::Parse {
                line: e.position().map_or(0, |p| p.line()),
                reason: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let parse = |reason: String| RegistryError::Parse { line, reason };
            let frame_idx = record[3]
                .parse::<u64>()
                .map_err(|e| parse(format!("frame_idx {:?}: {e}", &record[3])))?;
            let split = record[4].parse::<Split>().map_err(parse)?;
            let label = registry.canonicalize(&record[5]).map_err(|e| parse(e.to_string()))?;
            let row_index = record[6]
                .parse::<usize>()
                .map_err(|e| parse(format!("row_index {:?}: {e}", &record[6])))?;
            rows.push(CatalogRow {
                sample_id: record[0].to_string(),
                dataset: record[1].to_string(),
                video_id: record[2].to_string(),
                frame_idx,
                split,
                label,
                row_index,
            });
        }
        SampleCatalog::new(rows, descriptors)
    }

    pub fn write_to<W: Write>(&self, writer: W) -> Result<(), RegistryError> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let csv_err = |e: csv::Error| RegistryError::Io(io::Error::other(e));
        wtr.write_record(CATALOG_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            wtr.write_record([
                r.sample_id.as_str(),
                r.dataset.as_str(),
                r.video_id.as_str(),
                &r.frame_idx.to_string(),
                r.split.as_str(),
                r.label.as_str(),
                &r.row_index.to_string(),
            ])
            .map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Loads and validates a catalog against the builtin registry and datasets.
pub fn load_catalog(path: impl AsRef<Path>) -> Result<SampleCatalog, RegistryError> {
    load_catalog_with(path, ManipulationRegistry::builtin(), &builtin_dataset_descriptors())
}

pub fn load_catalog_with(
    path: impl AsRef<Path>,
    registry: &ManipulationRegistry,
    descriptors: &[DatasetDescriptor],
) -> Result<SampleCatalog, RegistryError> {
    SampleCatalog::read_from(File::open(path)?, registry, descriptors)
}

pub fn write_catalog(path: impl AsRef<Path>, catalog: &SampleCatalog) -> Result<(), RegistryError> {
    let file = File::create(path)?;
    catalog.write_to(io::BufWriter::new(file))
}

/// Pairwise-distinct dataset names; duplicates are an error upstream.
pub(crate) fn descriptor_names(descriptors: &[DatasetDescriptor]) -> HashSet<&str> {
    descriptors.iter().map(|d| d.name.as_str()).collect()
}
