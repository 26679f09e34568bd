use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("unknown method id `{0}`")]
    UnknownMethod(String),
    #[error("method `{0}` listed more than once")]
    DuplicateMethod(String),
    #[error("override for `{0}` does not match a selected method")]
    OrphanOverride(String),
    #[error("invalid override for `{method}`: {reason}")]
    Override { method: String, reason: String },
    #[error("column `{column}` not found in {path}")]
    MissingColumn { column: String, path: PathBuf },
    #[error("no methods selected")]
    NoMethods,
    #[error(transparent)]
    Core(#[from] itr_core::ItrError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;
