use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed JSON: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("document {doc_id}: {reason}")]
    InvalidDocument { doc_id: String, reason: String },

    #[error("span out of range: ({start}, {end}) in a document of {len} tokens")]
    SpanOutOfRange { start: usize, end: usize, len: usize },

    #[error("span length {length} exceeds the maximum span length {max_len}")]
    SpanTooLong { length: usize, max_len: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("window required: document {doc_id} has {len} tokens but the encoder accepts {max_positions}")]
    WindowRequired {
        doc_id: String,
        len: usize,
        max_positions: usize,
    },

    #[error("document {doc_id}: clause {clause} has {len} tokens, more than max_positions {max_positions}")]
    ClauseTooLong {
        doc_id: String,
        clause: usize,
        len: usize,
        max_positions: usize,
    },

    #[error("label {0:?} is not in the label vocabulary")]
    UnknownLabel(String),

    #[error("config: {0}")]
    Config(String),

    #[error("config: missing required key `{0}`")]
    MissingKey(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("checkpoint schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: String, expected: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("encoder: {0}")]
    Encoder(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid_doc(doc_id: &str, reason: impl Into<String>) -> Self {
        Error::InvalidDocument {
            doc_id: doc_id.to_string(),
            reason: reason.into(),
        }
    }
}

impl Error {
    /// Process exit code for the command-line tool: 2 for bad input or
    /// configuration, 3 for training failures, 4 for model or I/O problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MalformedLine { .. }
            | Error::InvalidDocument { .. }
            | Error::SpanOutOfRange { .. }
            | Error::SpanTooLong { .. }
            | Error::WindowRequired { .. }
            | Error::ClauseTooLong { .. }
            | Error::UnknownLabel(_)
            | Error::Config(_)
            | Error::MissingKey(_)
            | Error::InvalidArgument(_) => 2,
            Error::EmptyTrainingSet | Error::Diverged { .. } => 3,
            Error::Io { .. }
            | Error::DimensionMismatch { .. }
            | Error::SchemaVersion { .. }
            | Error::Checkpoint(_)
            | Error::Encoder(_) => 4,
        }
    }
}
