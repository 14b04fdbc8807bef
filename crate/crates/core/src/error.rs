use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum DpaError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("csv parse error at row {row}, column {col}: {msg}")]
    Csv { row: usize, col: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DpaError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        DpaError::Parameter(msg.into())
    }

    pub(crate) fn dim(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        DpaError::Dimension { op, left, right }
    }
}

pub type Result<T> = std::result::Result<T, DpaError>;
