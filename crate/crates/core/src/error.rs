use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NumericInput(String),

    #[error("activation trace does not belong to this network: {0}")]
    Trace(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("training diverged at step {step}: {what}")]
    Diverged { step: u64, what: String },

    #[error("numeric failure at step {step}: {what}")]
    Numeric { step: usize, what: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint is truncated: {0}")]
    CheckpointTruncated(String),

    #[error("checkpoint payload for {name} is corrupt: {msg}")]
    CheckpointPayload { name: String, msg: String },

    #[error("checkpoint shape manifest mismatch: {0}")]
    CheckpointShape(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code for the CLI: 1 usage/config, 2 I/O, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Image { .. }
            | Error::Format { .. }
            | Error::CheckpointVersion { .. }
            | Error::CheckpointTruncated(_)
            | Error::CheckpointPayload { .. }
            | Error::CheckpointShape(_) => 2,
            Error::NumericInput(_) | Error::Diverged { .. } | Error::Numeric { .. } => 3,
            Error::Context { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
