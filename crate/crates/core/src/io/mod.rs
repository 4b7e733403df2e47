//! On-disk formats: ATRB embedding matrices, ATRH head files, flat config
//! files, JSON Lines plans and report records.

mod config;
mod embeddings;
mod head_file;
mod plan;
mod report;

pub use config::{config_hash, parse_config, read_config, RunConfig, CONFIG_KEYS};
pub use embeddings::{read_embeddings, read_embeddings_from, write_embeddings, write_embeddings_to, HEADER_LEN};
pub use head_file::{read_head, read_head_from, write_head, write_head_to, HeadFile};
pub use plan::{read_plan, read_plan_from, write_plan, write_plan_to};
pub use report::{
    read_records, render_report, sort_records, write_report, ReportFormat, ReportRecord, BA_BASIS, CSV_COLUMNS,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: &'static str, found: String },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),
    #[error("truncated header: {got} of {expected} bytes")]
    TruncatedHeader { expected: usize, got: usize },
    #[error("truncated payload: expected {expected} bytes, got {got}")]
    TruncatedPayload { expected: u64, got: u64 },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(u64),
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("malformed head file: {0}")]
    BadHead(String),
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("plan line {line}: {reason}")]
    Plan { line: usize, reason: String },
    #[error("record file: {0}")]
    Record(String),
    #[error("no records to report")]
    EmptyInput,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
