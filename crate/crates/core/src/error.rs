use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },

    #[error("event `{event_id}` lists gold paragraph `{paragraph_id}` which is not in the corpus")]
    DanglingReference { event_id: String, paragraph_id: String },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("dimension mismatch: expected {expected}, found {found}{}", id.as_ref().map(|i| format!(" (id `{i}`)")).unwrap_or_default())]
    DimensionMismatch { expected: usize, found: usize, id: Option<String> },

    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,

    #[error("no embedding for `{0}`")]
    MissingEmbedding(String),

    #[error("no pair score for headline `{headline_id}` and paragraph `{paragraph_id}`")]
    MissingPairScore { headline_id: String, paragraph_id: String },

    #[error("unknown document `{0}`")]
    UnknownDocument(String),

    #[error("unknown cluster {0}")]
    UnknownCluster(usize),

    #[error("unknown event `{0}`")]
    UnknownEvent(String),

    #[error("embedding service protocol error: {0}")]
    Protocol(String),

    #[error("embedding service request failed after {attempts} attempts: {message}")]
    Network { attempts: u32, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("event `{event_id}`: {source}")]
    Event {
        event_id: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl ToString) -> Self {
        Error::Parse { path: path.into(), line, message: message.to_string() }
    }

    pub(crate) fn in_event(self, event_id: &str) -> Self {
        match self {
            e @ Error::Event { .. } => e,
            other => Error::Event { event_id: event_id.to_string(), source: Box::new(other) },
        }
    }

    /// Event the error is attributed to, if any.
    pub fn event_id(&self) -> Option<&str> {
        match self {
            Error::Event { event_id, .. } => Some(event_id),
            Error::UnknownEvent(id) => Some(id),
            _ => None,
        }
    }
}
