use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("non-finite weight in record {record} at entry {entry}")]
    NonFinite { record: usize, entry: usize },

    #[error("kernel size must be an odd integer >= 3, got {0}")]
    InvalidKernelSize(u32),

    #[error("corpus invariant violated: {0}")]
    CorpusInvariant(String),

    #[error("csv error: {0}")]
    Csv(String),

    #[error("degenerate filter: centered norm {norm:e} is not above {eps:e}")]
    DegenerateFilter { norm: f64, eps: f64 },

    #[error("vector is not centered: sum = {0:e}")]
    NotCentered(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("kernel size mismatch: expected {expected}, got {got}")]
    KernelSizeMismatch { expected: u32, got: u32 },

    #[error("invalid template: {0}")]
    InvalidTemplate(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("code {0} outside [0, 1]")]
    CodeOutOfRange(f64),

    #[error("invalid label map: {0}")]
    InvalidLabelMap(String),

    #[error("unknown pattern class {0:?}")]
    UnknownClass(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("constant filter cannot be min-max encoded")]
    ConstantFilter,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("inputs are misaligned: {left} vs {right}")]
    Misaligned { left: usize, right: usize },
}

impl Error {
    /// Whether the error stems from invalid user input rather than a runtime
    /// failure. The CLI maps these to exit status 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidKernelSize(_)
                | Error::CorpusInvariant(_)
                | Error::InvalidTemplate(_)
                | Error::InvalidModel(_)
                | Error::InvalidConfig(_)
                | Error::CodeOutOfRange(_)
                | Error::InvalidLabelMap(_)
                | Error::UnknownClass(_)
                | Error::KernelSizeMismatch { .. }
                | Error::DimensionMismatch { .. }
        )
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Csv(format!("{other:?}")),
        }
    }
}
