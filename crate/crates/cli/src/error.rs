use std::path::PathBuf;

use thiserror::Error;

use pairdiff_core::inference::InferenceError;
use pairdiff_core::oracle::OracleError;

use crate::ingest::IngestError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot access {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("data error in {}: {source}", path.display())]
    Data { path: PathBuf, source: IngestError },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    /// 2 configuration, 3 I/O, 4 data parsing, 5 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Data { .. } => 4,
            CliError::Numerical(_) => 5,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::InvalidSpec(msg) => CliError::Config(msg),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::NotPlr(_) | OracleError::TooFewReps { .. } | OracleError::Invalid(_) | OracleError::Dgp(_) => CliError::Config(e.to_string()),
            OracleError::Inference(inner) => inner.into(),
            other => CliError::Numerical(other.to_string()),
        }
    }
}
