use std::path::PathBuf;

use thiserror::Error;

use crate::cifar::RECORD_LEN;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] emoc_core::Error),
    #[error("data file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {len} bytes is not a whole number of {RECORD_LEN}-byte records", path.display())]
    TruncatedRecord { path: PathBuf, len: u64 },
    #[error("{}: record {record} has fine label {label}, expected < 100", path.display())]
    LabelOutOfRange { path: PathBuf, record: usize, label: u8 },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("config: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }
}
