use std::path::PathBuf;

use crate::corpus::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("document `{doc_id}`: span [{start}, {end}) out of range for {len} tokens")]
    SpanOutOfRange {
        doc_id: String,
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("document `{doc_id}`: duplicate event id `{event_id}`")]
    DuplicateEventId { doc_id: String, event_id: String },

    #[error("invalid document: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),

    #[error("template for `{event_type}`: {message}")]
    Template { event_type: String, message: String },

    #[error("duplicate template entry for event type `{0}`")]
    DuplicateTemplate(String),

    #[error("no template for event type `{0}`")]
    MissingTemplate(String),

    #[error("document `{doc_id}`: overlapping triggers for events `{first}` and `{second}`")]
    OverlappingTriggers {
        doc_id: String,
        first: String,
        second: String,
    },

    #[error("document `{doc_id}` has {events} events, more than the {max} marker pairs available")]
    TooManyEvents {
        doc_id: String,
        events: usize,
        max: usize,
    },

    #[error("invalid window sizes: {0}")]
    WindowSizes(String),

    #[error("infeasible generator config: {0}")]
    InfeasibleConfig(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty context: span selection needs at least one context token")]
    EmptyContext,

    #[error("prediction for document `{doc_id}` references unknown event `{event_id}`")]
    UnknownEvent { doc_id: String, event_id: String },

    #[error("unknown document `{0}`")]
    UnknownDocument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numerics rather than the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Shape(_))
    }
}
