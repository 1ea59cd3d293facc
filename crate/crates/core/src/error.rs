use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("lattice alignment error: {0}")]
    Alignment(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("numerical failure at t = {time}")]
    NumericalFailure { time: f64 },
    #[error("decomposition infeasible: only {achievable} parts reach the threshold")]
    Infeasible { achievable: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
