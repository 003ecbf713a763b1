use std::path::{Path, PathBuf};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{source_name}:{line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },

    #[error("unknown architecture `{key}`; registered: {}", registered.join(", "))]
    UnknownArch { key: String, registered: Vec<String> },

    #[error("architecture `{key}` needs an external backend: {hint}")]
    BackendUnavailable { key: String, hint: String },

    #[error("{path}: checkpoint does not fit model: {msg}")]
    CheckpointMismatch { path: PathBuf, msg: String },

    #[error("{path}: corrupted checkpoint: {msg}")]
    CorruptCheckpoint { path: PathBuf, msg: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("{0}")]
    Cases(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(source_name: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad user input (configuration, arguments, data
    /// that fails validation) rather than a failure while doing the work.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Parse { .. }
                | Error::UnknownArch { .. }
                | Error::BackendUnavailable { .. }
                | Error::ShapeMismatch(_)
                | Error::EmptyDataset(_)
                | Error::Cases(_)
        )
    }
}
