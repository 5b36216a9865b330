use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or hyperparameters that cannot describe a valid model or run.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller-supplied data violates an operation's precondition.
    #[error("input error: {0}")]
    Input(String),

    /// Malformed dataset file.
    #[error("ingestion error in {path} at byte offset {offset}: {message}")]
    Ingestion {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("partition error: {0}")]
    Partition(String),

    /// Config file or override could not be parsed.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("client {client} failed: {source}")]
    Client {
        client: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by the dataset itself (missing or malformed
    /// files, unpartitionable data) rather than by the configuration.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Ingestion { .. } | Error::Partition(_) => true,
            Error::Client { source, .. } => source.is_data_error(),
            _ => false,
        }
    }

    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Parse { .. })
    }
}
