use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ItrError>;

#[derive(Debug, Error)]
pub enum ItrError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("{role} not binary: column `{column}` row {row} has value {value:?}")]
    NotBinary {
        role: &'static str,
        column: String,
        row: usize,
        value: String,
    },

    #[error("dataset is empty after dropping {dropped} rows with missing values")]
    EmptyDataset { dropped: usize },

    #[error("schema: {0}")]
    Schema(String),

    #[error("split: {0}")]
    Split(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("arm empty: no {0} patients")]
    ArmEmpty(&'static str),

    #[error("rank deficient system: penalized normal equations are singular")]
    RankDeficient,

    #[error("not enough data: {0}")]
    TooSmall(String),

    #[error("cross-fit: {0}")]
    CrossFit(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("spec ill-posed: {clipped:.1}% of response probabilities clipped (max 10%)")]
    IllPosed { clipped: f64 },
}
