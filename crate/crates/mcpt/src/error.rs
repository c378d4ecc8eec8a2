//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),

    #[error("ill-conditioned model: {0}")]
    IllConditioned(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The perturbative solver found a kernel degeneracy that its constraint
    /// set cannot resolve; callers may fall back to finite differences.
    #[error("degenerate kernel (rank {rank}): {msg}")]
    DegenerateKernel { rank: usize, msg: String },

    #[error("search failure: {0}")]
    Search(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
