use thiserror::Error;

/// Library-wide error type. Variants group into four failure families that the
/// CLI maps onto distinct exit codes: input/usage problems, validation of
/// model objects, numeric degeneracies, and hard size limits.
#[derive(Debug, Error)]
pub enum SbmError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid bound: {0}")]
    InvalidBound(String),
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),
    #[error("degenerate moments: {0}")]
    DegenerateMoments(String),
    #[error("root extraction failed: {0}")]
    RootExtraction(String),
    #[error("degenerate model: {0}")]
    DegenerateModel(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

impl SbmError {
    /// Stable one-word category token, used by the CLI for machine-parseable
    /// stderr lines and exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            SbmError::InvalidParams(_) | SbmError::InvalidBound(_) => "validation",
            SbmError::DegenerateMoments(_)
            | SbmError::RootExtraction(_)
            | SbmError::DegenerateModel(_) => "degenerate",
            SbmError::SizeLimit(_) => "size-limit",
            SbmError::Io(_) | SbmError::Parse(_) => "usage",
        }
    }
}

pub type Result<T> = std::result::Result<T, SbmError>;
