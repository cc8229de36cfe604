use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("variable does not belong to this tape")]
    NotOnTape,

    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("gradient supplied for unregistered parameter `{0}`")]
    UnregisteredParam(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("annotated utterance error at position {pos}: {kind}")]
    Annotation { pos: usize, kind: AnnotationErrorKind },

    #[error("line {line}: {message}")]
    Line { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnnotationErrorKind {
    EmptyInput,
    UnbalancedOpen,
    UnbalancedClose,
    MissingSeparator,
    NestedSpan,
    EmptySlotName,
    EmptySpan,
}

impl std::fmt::Display for AnnotationErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let msg = match self {
            Self::EmptyInput => "empty utterance",
            Self::UnbalancedOpen => "unclosed '['",
            Self::UnbalancedClose => "']' without matching '['",
            Self::MissingSeparator => "missing ' : ' separator inside span",
            Self::NestedSpan => "nested span",
            Self::EmptySlotName => "empty slot name",
            Self::EmptySpan => "empty span",
        };
        f.write_str(msg)
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
