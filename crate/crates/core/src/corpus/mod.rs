//! Text ingestion: cleaning, the memory-mapped record store, deterministic
//! splits, synthetic corpora and the CSV / JSON-lines readers.

mod clean;
mod formats;
mod split;
mod store;
mod synthetic;

pub use clean::clean_text;
pub use formats::{read_csv, read_jsonl, read_records};
pub use split::{split, SplitSpec, Splits};
pub use store::{ingest, MmapStore, Record, STORE_MAGIC, STORE_VERSION};
pub use synthetic::{gen_synthetic, SyntheticConfig, SyntheticCorpus};

use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("record {id}: {reason}")]
    Validation { id: u64, reason: String },
    #[error("invalid store {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("record index {index} out of range for store of {len} records")]
    Bounds { index: usize, len: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CorpusError {
    let path = path.into();
    move |source| CorpusError::Io { path, source }
}

/// The learning problem a dataset poses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    MultiOutputRegression,
    MultiLabelClassification,
    MultiClassClassification,
}

impl TaskKind {
    pub fn code(self) -> u8 {
        match self {
            TaskKind::MultiOutputRegression => 0,
            TaskKind::MultiLabelClassification => 1,
            TaskKind::MultiClassClassification => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(TaskKind::MultiOutputRegression),
            1 => Some(TaskKind::MultiLabelClassification),
            2 => Some(TaskKind::MultiClassClassification),
            _ => None,
        }
    }

    pub fn is_classification(self) -> bool {
        !matches!(self, TaskKind::MultiOutputRegression)
    }
}

/// One input row. Classification rows carry 0/1 indicators in `targets`,
/// one per label; see [`RawRecord::label_mask`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: u64,
    pub text: String,
    pub targets: Vec<f64>,
}

impl RawRecord {
    pub fn new(id: u64, text: impl Into<String>, targets: Vec<f64>) -> Self {
        Self {
            id,
            text: text.into(),
            targets,
        }
    }

    /// Labels set to a value above one half.
    pub fn label_mask(&self) -> Vec<bool> {
        self.targets.iter().map(|&t| t > 0.5).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub task: TaskKind,
    pub target_names: Vec<String>,
    pub record_count: u64,
    pub created_seed: u64,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, task: TaskKind, target_names: Vec<String>, seed: u64) -> Self {
        Self {
            name: name.into(),
            task,
            target_names,
            record_count: 0,
            created_seed: seed,
        }
    }

    pub fn target_count(&self) -> usize {
        self.target_names.len()
    }
}
