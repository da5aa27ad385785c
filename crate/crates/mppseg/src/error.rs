//! Crate-wide error type.
//!
//! Variants are grouped so the CLI can map them onto distinct exit codes:
//! configuration problems, I/O problems, and everything else.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller passed a structurally invalid argument (wrong sizes, counts,
    /// non-positive scales, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A value lies outside the domain of the operation (pure parameter out
    /// of its template bounds, empty sample set, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A geometric precondition failed (degenerate or self-intersecting
    /// polygon, zero area).
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Malformed or inconsistent run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// File system or image codec failure.
    #[error("io error: {0}")]
    Io(String),

    /// Anything that went wrong while running a chain or a study.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
