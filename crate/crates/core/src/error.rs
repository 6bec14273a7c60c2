use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FdpError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, FdpError>;

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::FdpError::$variant(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
