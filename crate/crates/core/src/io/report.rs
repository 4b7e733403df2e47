use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::metrics::DetectionMetrics;
use crate::protocol::{LossSetting, Mode};
use crate::registry::ManipulationId;

/// How balanced accuracy is computed, stamped into every record.
pub const BA_BASIS: &str = "binarized score >= 0.5";

/// Column order of CSV reports; also the field order of JSON records.
pub const CSV_COLUMNS: [&str; 20] = [
    "model_tag",
    "train_dataset",
    "test_dataset",
    "manipulation",
    "mode",
    "loss_setting",
    "auc",
    "eer",
    "eer_threshold",
    "ba",
    "n_real",
    "n_fake",
    "manipulation_accuracy",
    "n_manipulation",
    "ba_basis",
    "collapsed",
    "config_hash",
    "seed",
    "head_sha256",
    "tool_version",
];

/// One evaluated cell. Detection fields are absent when the test rows hold
/// only one class; manipulation fields are present only when a target
/// manipulation was requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRecord {
    pub model_tag: String,
    pub train_dataset: String,
    pub test_dataset: String,
    pub manipulation: Option<ManipulationId>,
    pub mode: Mode,
    pub loss_setting: LossSetting,
    pub auc: Option<f64>,
    pub eer: Option<f64>,
    pub eer_threshold: Option<f64>,
    pub ba: Option<f64>,
    pub n_real: usize,
    pub n_fake: usize,
    pub manipulation_accuracy: Option<f64>,
    pub n_manipulation: Option<usize>,
    pub ba_basis: String,
    pub collapsed: Option<bool>,
    pub config_hash: String,
    pub seed: u64,
    /// Hex SHA-256 of the evaluated head file.
    pub head_sha256: String,
    pub tool_version: String,
}

impl ReportRecord {
    pub fn set_detection(&mut self, d: &DetectionMetrics) {
        self.auc = Some(d.auc);
        self.eer = Some(d.eer);
        self.eer_threshold = Some(d.eer_threshold);
        self.ba = Some(d.ba);
        self.n_real = d.n_real;
        self.n_fake = d.n_fake;
    }

    /// Row label in detection tables: `binary` or the loss tag.
    fn setting_label(&self) -> String {
        let base = match self.mode {
            Mode::Binary => "binary".to_string(),
            Mode::Multiclass => self.loss_setting.tag().to_string(),
        };
        if self.collapsed == Some(true) {
            format!("{base} (collapsed)")
        } else {
            base
        }
    }

    fn sort_key(&self) -> impl Ord + '_ {
        (
            &self.model_tag,
            &self.train_dataset,
            &self.test_dataset,
            &self.manipulation,
            self.mode,
            self.loss_setting,
            self.seed,
            &self.config_hash,
            &self.head_sha256,
        )
    }
}

pub fn sort_records(records: &mut [ReportRecord]) {
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(format!("format must be csv, json or md, got {other:?}")),
        }
    }
}

/// Reads a record file holding either one record object or an array.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ReportRecord>, IoError> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    Ok(match value {
        serde_json::Value::Array(_) => serde_json::from_value(value)?,
        serde_json::Value::Object(_) => vec![serde_json::from_value(value)?],
        _ => return Err(IoError::Record("expected a JSON object or array".into())),
    })
}

/// Renders records in deterministic order.
pub fn render_report(records: &[ReportRecord], format: ReportFormat) -> Result<String, IoError> {
    if records.is_empty() {
        return Err(IoError::EmptyInput);
    }
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    match format {
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
            for r in &sorted {
                w.serialize(r)?;
            }
            let bytes = w.into_inner().map_err(|e| IoError::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv of UTF-8 fields"))
        }
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&sorted)?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Markdown => Ok(render_markdown(&sorted)),
    }
}

pub fn write_report(path: impl AsRef<Path>, records: &[ReportRecord], format: ReportFormat) -> Result<(), IoError> {
    let text = render_report(records, format)?;
    File::create(path)?.write_all(text.as_bytes())?;
    Ok(())
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x))
}

fn table_row(cells: impl IntoIterator<Item = String>) -> String {
    let mut s = String::from("|");
    for c in cells {
        s.push(' ');
        s.push_str(&c);
        s.push_str(" |");
    }
    s.push('\n');
    s
}

/// Test datasets with the training dataset first, then alphabetical.
fn column_order<'a>(train: Option<&str>, tests: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut cols: Vec<&str> = tests.collect::<BTreeSet<_>>().into_iter().collect();
    if let Some(pos) = train.and_then(|t| cols.iter().position(|c| *c == t)) {
        let diag = cols.remove(pos);
        cols.insert(0, diag);
    }
    cols
}

fn render_markdown(records: &[ReportRecord]) -> String {
    let mut out = String::from("# Attribution report\n");

    let mut by_manip: BTreeMap<&ManipulationId, Vec<&ReportRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.manipulation_accuracy.is_some()) {
        if let Some(m) = &r.manipulation {
            by_manip.entry(m).or_default().push(r);
        }
    }
    for (manip, recs) in &by_manip {
        let _ = write!(out, "\n## Manipulation accuracy (%): {manip}\n\n");
        let cols = column_order(None, recs.iter().map(|r| r.test_dataset.as_str()));
        let settings: BTreeSet<String> = recs.iter().map(|r| r.setting_label()).collect();
        let with_setting = settings.len() > 1;
        let mut header = vec!["Model".to_string()];
        if with_setting {
            header.push("Setting".into());
        }
        header.push("Train\\Test".into());
        header.extend(cols.iter().map(|c| c.to_string()));
        out.push_str(&table_row(header.clone()));
        out.push_str(&table_row(header.iter().enumerate().map(|(i, _)| {
            if i + cols.len() >= header.len() { "---:".to_string() } else { "---".to_string() }
        })));
        let mut rows: BTreeMap<(&str, String, &str), BTreeMap<&str, Option<f64>>> = BTreeMap::new();
        for r in recs {
            rows.entry((r.model_tag.as_str(), r.setting_label(), r.train_dataset.as_str()))
                .or_default()
                .insert(r.test_dataset.as_str(), r.manipulation_accuracy);
        }
        for ((model, setting, train), vals) in rows {
            let mut cells = vec![model.to_string()];
            if with_setting {
                cells.push(setting);
            }
            cells.push(train.to_string());
            cells.extend(cols.iter().map(|c| pct(vals.get(c).copied().flatten())));
            out.push_str(&table_row(cells));
        }
    }

    let mut by_source: BTreeMap<(&str, &str), Vec<&ReportRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.manipulation.is_none() && r.auc.is_some()) {
        by_source.entry((r.model_tag.as_str(), r.train_dataset.as_str())).or_default().push(r);
    }
    for ((model, train), recs) in &by_source {
        let _ = write!(out, "\n## Detection (%): {model}, trained on {train}\n\n");
        let cols = column_order(Some(train), recs.iter().map(|r| r.test_dataset.as_str()));
        let mut header = vec!["Setting".to_string()];
        for c in &cols {
            for m in ["AUC", "BA", "EER"] {
                header.push(format!("{c} {m}"));
            }
        }
        out.push_str(&table_row(header.clone()));
        out.push_str(&table_row(
            std::iter::once("---".to_string()).chain((1..header.len()).map(|_| "---:".to_string())),
        ));
        type Row<'r> = (String, BTreeMap<&'r str, &'r ReportRecord>);
        let mut rows: BTreeMap<(Mode, LossSetting, &str), Row<'_>> = BTreeMap::new();
        for r in recs {
            rows.entry((r.mode, r.loss_setting, r.config_hash.as_str()))
                .or_insert_with(|| (r.setting_label(), BTreeMap::new()))
                .1
                .insert(r.test_dataset.as_str(), r);
        }
        let mut label_count: BTreeMap<String, usize> = BTreeMap::new();
        for (label, _) in rows.values() {
            *label_count.entry(label.clone()).or_default() += 1;
        }
        for ((_, _, hash), (label, vals)) in &rows {
            let shown = if label_count[label] > 1 { format!("{label} [{hash}]") } else { label.clone() };
            let mut cells = vec![shown];
            for c in &cols {
                let r = vals.get(c);
                cells.push(pct(r.and_then(|r| r.auc)));
                cells.push(pct(r.and_then(|r| r.ba)));
                cells.push(pct(r.and_then(|r| r.eer)));
            }
            out.push_str(&table_row(cells));
        }
    }
    let _ = write!(out, "\nBalanced accuracy is computed on the {BA_BASIS}.\n");
    out
}
