use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read or write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("load error: {0}")]
    Load(String),

    #[error("record {index}: missing or malformed field `{field}`")]
    MissingField { index: usize, field: String },

    #[error("record {index}: {message}")]
    Validation { index: usize, message: String },

    #[error("invalid dependency tree: {0}")]
    Structure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("lookup error: index {index} out of range for `{table}` of size {size}")]
    Lookup { table: String, index: usize, size: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("training diverged at epoch {epoch}, step {step}: `{term}` is {value}")]
    Divergence {
        epoch: usize,
        step: usize,
        term: String,
        value: f64,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Load(_) | Error::MissingField { .. } => "load",
            Error::Validation { .. } => "validation",
            Error::Structure(_) => "structure",
            Error::Config(_) => "config",
            Error::Lookup { .. } => "lookup",
            Error::Shape(_) => "shape",
            Error::Input(_) => "input",
            Error::Generation(_) => "generation",
            Error::Divergence { .. } => "divergence",
            Error::Checkpoint(_) => "checkpoint",
        }
    }
}
