use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MttError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{msg} at line {line}")]
    Parse { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("dimension mismatch at line {line}: expected {expected}, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("index {index} out of range (valid 1..={max})")]
    OutOfRange { index: usize, max: usize },

    #[error("problem size {size} exceeds solver budget {budget}")]
    Budget { size: usize, budget: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("invalid scene spec: {0}")]
    Scene(String),
}

impl MttError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MttError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        MttError::Parse {
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, MttError>;
