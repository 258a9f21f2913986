//! Error type shared across the crate.

use std::fmt;

/// Errors produced by statistics gathering, operators, solvers and I/O.
#[derive(Debug)]
pub enum Error {
    /// Dimensions of two values do not agree.
    Shape(String),
    /// A numeric argument is out of its valid range.
    Value(String),
    /// Requested displacement extent exceeds what the statistics store.
    Extent(String),
    /// An operation received an empty collection.
    Empty(String),
    /// A tracked displacement was never observed; the corpus images were
    /// too small for the requested template size.
    ZeroPairCount { du: i64, dv: i64 },
    /// Dense materialization refused: the matrix would be too large.
    SizeGuard { size: usize, limit: usize },
    /// A matrix or Fourier block is not positive definite.
    NotPositiveDefinite(String),
    /// An iterative solver met non-positive direction curvature.
    Indefinite { iteration: usize },
    /// A non-finite value appeared where finite data is required.
    NonFinite(String),
    /// Training data cannot distinguish the classes (b = 0).
    Degenerate(String),
    Io(std::io::Error),
    /// A serialized file is malformed.
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Value(msg) => write!(f, "invalid value: {msg}"),
            Error::Extent(msg) => write!(f, "insufficient extent: {msg}"),
            Error::Empty(msg) => write!(f, "empty input: {msg}"),
            Error::ZeroPairCount { du, dv } => write!(
                f,
                "no pixel pairs observed at displacement ({du}, {dv}); \
                 the corpus images were too small for this extent"
            ),
            Error::SizeGuard { size, limit } => write!(
                f,
                "dense materialization of a {size}-dimensional system exceeds the guard ({limit})"
            ),
            Error::NotPositiveDefinite(msg) => write!(f, "not positive definite: {msg}"),
            Error::Indefinite { iteration } => write!(
                f,
                "non-positive direction curvature at iteration {iteration}; \
                 operator is not positive definite (lambda too small or corrupt statistics?)"
            ),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::Degenerate(msg) => write!(f, "degenerate training data: {msg}"),
            Error::Io(err) => write!(f, "i/o error: {err}"),
            Error::Format(msg) => write!(f, "malformed file: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}
