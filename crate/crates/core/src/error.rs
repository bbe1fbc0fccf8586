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

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("duplicate post id `{0}`")]
    DuplicateId(String),

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("duplicate lexicon phrase `{phrase}` for semantic type {semtype}")]
    DuplicatePhrase { phrase: String, semtype: String },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class {class} has {count} posts, fewer than the {required} required")]
    InsufficientClass {
        class: String,
        count: usize,
        required: usize,
    },

    #[error("posts without a sentiment label: {}", .0.join(", "))]
    Unclassified(Vec<String>),

    #[error("query post `{0}` mentions no disease; symptom-only queries are not supported for treatment suggestion")]
    NoDiseases(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unknown post id `{0}`")]
    UnknownPost(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(source_name: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }

    /// Line number for parse errors, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            Error::Parse { line, .. } => Some(*line),
            _ => None,
        }
    }
}
