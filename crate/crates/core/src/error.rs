use thiserror::Error;

/// Errors raised by the library.
///
/// `Contract` covers violated preconditions of a public operation (shape
/// mismatches, out-of-range arguments); the CLI maps it to exit status 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error in `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("malformed record {index}: {message}")]
    Record { index: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("training diverged at step {0}")]
    Divergence(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
