use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("support too large to enumerate: {count} outcomes (limit {limit})")]
    SupportTooLarge { count: u128, limit: u128 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn numeric(msg: impl Into<String>) -> Error {
    Error::NumericDomain(msg.into())
}
