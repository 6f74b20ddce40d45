use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("vocabulary error: {0}")]
    Vocabulary(String),
    #[error("training state error: {0}")]
    TrainingState(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("capacity exceeded: sequence of {len} positions, model supports {max}")]
    Capacity { len: usize, max: usize },
    #[error("[pause] emitted with no pending segment")]
    PauseOverflow,
    #[error("internal consistency error: {0}")]
    Consistency(String),
    #[error("training diverged at update {update}: {detail}")]
    Divergence { update: u64, detail: String },
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("missing artifact {path}: run `{producer}` first")]
    MissingArtifact { path: PathBuf, producer: &'static str },
    #[error("refusing to overwrite {0} (pass --force)")]
    WouldOverwrite(PathBuf),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// Wraps the error with a description of what was being processed.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
