use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input too short for a convolution's receptive field.
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Non-finite loss or gradient during optimization.
    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("effect size undefined: {0}")]
    UndefinedEffectSize(String),

    #[error("malformed {format} data: {detail}")]
    Format { format: &'static str, detail: String },

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(format: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { format, detail: detail.into() }
    }

    /// True for errors caused by bad user input rather than a runtime fault.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::Data(_) | Error::Shape(_) | Error::Dimension(_)
        )
    }
}

/// Dataset validation failures. Each variant carries a stable code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("row {row}: unknown label `{label}`")]
    UnknownLabel { row: usize, label: String },

    #[error("row {row}: expected {expected} values, found {found}")]
    LengthMismatch { row: usize, expected: usize, found: usize },

    #[error("row {row}, column {column}: `{text}` is not a number")]
    NonNumeric { row: usize, column: usize, text: String },

    #[error("row {row}, column {column}: value {value} is not finite")]
    NonFinite { row: usize, column: usize, value: f64 },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("invalid header: {0}")]
    Header(String),

    #[error("class `{0}` has no samples")]
    EmptyClass(String),

    #[error("class `{class}` has {count} samples, need at least {needed}")]
    TooFewSamples { class: String, count: usize, needed: usize },

    #[error("empty series")]
    EmptySeries,
}

impl DataError {
    pub fn code(&self) -> &'static str {
        match self {
            DataError::MissingFile(_) => "E_MISSING_FILE",
            DataError::UnknownLabel { .. } => "E_UNKNOWN_LABEL",
            DataError::LengthMismatch { .. } => "E_LENGTH_MISMATCH",
            DataError::NonNumeric { .. } => "E_NON_NUMERIC",
            DataError::NonFinite { .. } => "E_NON_FINITE",
            DataError::Manifest(_) => "E_MANIFEST",
            DataError::Header(_) => "E_HEADER",
            DataError::EmptyClass(_) => "E_EMPTY_CLASS",
            DataError::TooFewSamples { .. } => "E_TOO_FEW_SAMPLES",
            DataError::EmptySeries => "E_EMPTY_SERIES",
        }
    }
}
