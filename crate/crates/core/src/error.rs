use std::path::PathBuf;

use thiserror::Error;

use crate::markov::MarkovError;
use crate::metrics::MetricsError;
use crate::simengine::EngineError;
use crate::topology::TopologyError;
use crate::traces::TraceError;

/// Top-level error for experiment runs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("config error in {path}: {message}")]
    ConfigFile { path: PathBuf, message: String },
    #[error("dataset not found at {path}: {hint}")]
    MissingDataset { path: PathBuf, hint: String },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for configuration problems, 3 for data problems,
    /// 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ConfigFile { .. } | Error::Topology(_) | Error::Markov(_) => 2,
            Error::Trace(TraceError::Spec(_)) => 2,
            Error::MissingDataset { .. } | Error::Trace(_) | Error::Metrics(_) | Error::Csv(_) => 3,
            Error::Io { .. } => 3,
            Error::Engine(EngineError::UnknownNode { .. }) => 2,
            Error::Engine(EngineError::Timeline(_)) => 3,
            Error::Engine(_) => 1,
        }
    }
}
