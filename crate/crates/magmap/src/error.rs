//! Error type shared across the crate.
//!
//! Variants are grouped by how a front end should react to them: bad
//! configuration or invalid arguments, bad data (parse failures, points
//! outside the interpolable region, capacity limits), and numerical
//! failures (factorization breakdown, non-convergence, non-finite values).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or argument; the message names the field.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed input data (file contents, shapes, non-finite entries).
    #[error("invalid data: {0}")]
    Data(String),

    /// A query or training point lies outside the region where the grid
    /// supports a full interpolation stencil.
    #[error("point outside interpolable region: {0}")]
    Domain(String),

    /// The requested dense operation exceeds the configured size cap.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// Numerical failure: factorization breakdown, singular system,
    /// non-finite intermediate, or an iterative solver that cannot proceed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code a CLI should use for this error class.
    /// 2: configuration, 3: data/domain, 4: numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Domain(_) | Error::Capacity(_) | Error::Io(_) => 3,
            Error::Numerical(_) => 4,
        }
    }
}
