use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// Dimensions or shapes disagree.
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    /// A manifest, config, or stored artifact could not be parsed.
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    /// Invalid configuration values.
    #[error("config error: {0}")]
    Config(String),

    /// A batch or group could not satisfy its quotas.
    #[error("scheduling error: {0}")]
    Scheduling(String),

    /// A checkpoint directory is missing pieces or inconsistent.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training hit a non-finite loss and was aborted.
    #[error("training diverged at step {step}; last good checkpoint step: {last_good:?}")]
    Diverged { step: u64, last_good: Option<u64> },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn shape(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Shape {
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
