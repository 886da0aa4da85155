use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid load: {0}")]
    InvalidLoad(String),
    #[error("normalization stats: {0}")]
    Stats(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("simulation failed at t = {time:.6} s: {reason}")]
    Simulation { time: f64, reason: String },
    #[error("static solve failed: {0}")]
    Solve(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("corrupt dataset file {}: {reason}", file.display())]
    CorruptDataset { file: PathBuf, reason: String },
    #[error("split: {0}")]
    Split(String),
    #[error("training: {0}")]
    Training(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Short machine-readable category, used by the CLI error line and the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidTopology(_) => "invalid_topology",
            Error::InvalidLoad(_) => "invalid_load",
            Error::Stats(_) => "stats",
            Error::Tensor(_) => "shape",
            Error::Simulation { .. } => "simulation",
            Error::Solve(_) => "solve",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::CorruptDataset { .. } => "corrupt_dataset",
            Error::Split(_) => "split",
            Error::Training(_) => "training",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
