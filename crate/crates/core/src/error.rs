use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
    /// A declared premise (monotone α, finite weighted moment, ...) fails on
    /// the sample at hand.
    #[error("premise violated: {0}")]
    Premise(String),
    #[error("ill-posed problem: {0}")]
    IllPosed(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("Picard iteration diverged: {0}")]
    Divergence(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
