use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("cluster has no member documents")]
    EmptyCluster,

    #[error("corpus statistics need at least two documents, got {0}")]
    TooFewDocuments(usize),

    #[error("no clusterable profiles in time step {0}")]
    NoProfiles(usize),

    #[error("time step {step} failed: {cause}")]
    Step { step: usize, cause: Box<Error> },

    #[error("store at {0} is incomplete")]
    IncompleteStore(PathBuf),

    #[error("time step {0} is missing from the store")]
    MissingStep(usize),

    #[error("unknown node {node} in time step {step}")]
    UnknownNode { step: usize, node: usize },
}

impl Error {
    pub(crate) fn read(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Read {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn write(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Write {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
