use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised across the crate.
///
/// The variants are split so that callers (the CLI in particular) can tell a
/// bad configuration apart from a numeric failure at run time.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown dataset kind `{0}`")]
    UnknownKind(String),

    #[error("enumeration too large: {cells} grid cells exceed the limit of {limit}")]
    TooLarge { cells: u128, limit: u128 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors that stem from invalid inputs or configuration rather
    /// than from a failure during computation.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::LengthMismatch { .. }
                | Error::InvalidDistribution(_)
                | Error::InvalidParameter { .. }
                | Error::Config(_)
                | Error::UnknownKind(_)
                | Error::TooLarge { .. }
                | Error::Format(_)
        )
    }
}
