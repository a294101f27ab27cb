//! Error type shared by every stage of the toolkit.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed audio file: {0}")]
    Format(String),

    #[error("unsupported audio encoding: {0}")]
    Unsupported(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("manifest line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("insufficient data: {0}")]
    Data(String),

    #[error("clip too short to yield a single feature frame")]
    EmptyFeature,

    #[error("clip too short for identification: {0}")]
    InputTooShort(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("training diverged ({0}); try a smaller learning rate")]
    Divergence(String),

    #[error("corrupt model bundle: {0}")]
    CorruptModel(String),

    #[error("model format version {found} does not match supported version {expected}")]
    Version { found: u32, expected: u32 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 2 I/O, 3 configuration or usage, 4 data or precondition, 5 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Config(_) | Error::Param(_) => 3,
            Error::Format(_)
            | Error::Unsupported(_)
            | Error::DegenerateSignal(_)
            | Error::Schema { .. }
            | Error::Shape(_)
            | Error::Data(_)
            | Error::EmptyFeature
            | Error::InputTooShort(_)
            | Error::Label(_)
            | Error::CorruptModel(_)
            | Error::Version { .. }
            | Error::Empty(_)
            | Error::Degenerate(_)
            | Error::Precondition(_) => 4,
            Error::Divergence(_) | Error::Json(_) => 5,
        }
    }
}
