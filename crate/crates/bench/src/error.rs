use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    /// Every problem found while validating a configuration.
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{path}:{line}: non-finite value in column {column}")]
    NonFiniteValue { path: PathBuf, line: u64, column: usize },
    #[error(transparent)]
    Core(#[from] ppc_core::Error),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl BenchError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        BenchError::Io { context: context.into(), source }
    }

    /// Short machine-readable kind for the structured error report.
    pub fn kind(&self) -> &'static str {
        match self {
            BenchError::Config(_) => "config",
            BenchError::Parse { .. } => "parse",
            BenchError::NonFiniteValue { .. } => "non_finite_value",
            BenchError::Core(_) => "computation",
            BenchError::Io { .. } => "io",
            BenchError::Json(_) => "json",
            BenchError::Csv(_) => "csv",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;
