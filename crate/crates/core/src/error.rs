use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid hyper-parameters, layer chains, or config files.
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller passed arguments that violate an operation's contract.
    #[error("usage error: {0}")]
    Usage(String),
    /// An operation was called on a structure that is not ready for it.
    #[error("precondition failed: {0}")]
    Precondition(String),
    /// NaN or infinity appeared in a loss or in network parameters.
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
