use std::path::PathBuf;

use qarlab::QarError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{0}")]
    Model(#[from] QarError),

    #[error("likelihood failed at the starting point: {source}\n  parameters: {snapshot}")]
    Likelihood { source: QarError, snapshot: String },

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn input(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Input {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        CliError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code for each error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input { .. } | CliError::Parse { .. } => 3,
            CliError::Model(e) => match e {
                QarError::Config(_) => 2,
                QarError::Numeric { .. }
                | QarError::NoSignChange { .. }
                | QarError::MaxIterations { .. }
                | QarError::NotPositiveDefinite { .. } => 5,
                _ => 4,
            },
            CliError::Likelihood { .. } => 5,
            CliError::Output { .. } => 6,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
