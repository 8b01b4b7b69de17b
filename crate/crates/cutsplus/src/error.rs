//! Error type shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A cell of a delimited file failed to parse. `row` and `col` are
    /// 1-based and count physical lines/fields, including any header.
    #[error("parse failure in {path} at row {row}, column {col}: {reason}")]
    Parse {
        path: PathBuf,
        row: usize,
        col: usize,
        reason: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("simulation failure: {0}")]
    Simulation(String),

    #[error("non-finite loss at epoch {epoch} in {stage} stage")]
    NonFiniteLoss { epoch: usize, stage: &'static str },

    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },

    /// Ranking metrics need at least one true edge and one true non-edge.
    #[error("degenerate truth graph: positives={positives}, negatives={negatives}")]
    DegenerateTruth { positives: usize, negatives: usize },

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 config, 2 numeric, 3 i/o.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Shape(_) | Error::DegenerateTruth { .. } => 1,
            Error::Simulation(_)
            | Error::NonFiniteLoss { .. }
            | Error::NonFiniteGradient { .. } => 2,
            Error::Io { .. } | Error::Parse { .. } => 3,
            Error::Other(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
