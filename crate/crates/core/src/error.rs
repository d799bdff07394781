//! Error type shared by every module of the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Grid sizes do not match what an operation requires.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A window or index lies outside the grid it addresses.
    #[error("out of range: {0}")]
    OutOfRange(String),

    /// A parameter violates its documented precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The input configuration is rank-deficient or otherwise unsolvable.
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// A point cannot be projected (behind the camera or at infinity).
    #[error("projection error: {0}")]
    Projection(String),

    /// Required data is absent (missing capture, correspondences, truth).
    #[error("missing data: {0}")]
    MissingData(String),

    /// A file on disk does not follow the expected format.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
