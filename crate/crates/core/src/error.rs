use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents disagree with what an operation requires.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid settings: bad kernel/stride combination, undersized input,
    /// missing altitude band, empty sample set and so on.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("checkpoint error in field `{field}`: {reason}")]
    Checkpoint { field: String, reason: String },

    #[error("annotation error at index {index}: {reason}")]
    Annotation { index: usize, reason: String },

    #[error("load error in {}{}: {reason}", path.display(), line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Load { path: PathBuf, line: Option<usize>, reason: String },

    #[error("scoring error for sample `{sample}`: {reason}")]
    Scoring { sample: String, reason: String },

    #[error("generation error: {0}")]
    Generation(String),

    /// Non-finite gradient or loss during optimisation.
    #[error("training error: {0}")]
    Training(String),

    #[error("non-finite loss at step {step} (batch samples: {})", batch_ids.join(", "))]
    NonFiniteLoss { step: usize, batch_ids: Vec<String> },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn load(path: impl Into<PathBuf>, line: Option<usize>, reason: impl Into<String>) -> Self {
        Error::Load { path: path.into(), line, reason: reason.into() }
    }

    pub(crate) fn checkpoint(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Checkpoint { field: field.into(), reason: reason.into() }
    }
}
