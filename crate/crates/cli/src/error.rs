use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error in `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Input {
        path: PathBuf,
        #[source]
        source: moetrack::Error,
    },

    #[error(transparent)]
    Core(moetrack::Error),

    #[error("verification failed: {0}")]
    Verification(String),
}

impl From<moetrack::Error> for CliError {
    fn from(e: moetrack::Error) -> Self {
        match e {
            moetrack::Error::Config { key, message } => CliError::Config { key, message },
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    /// Process exit status: 1 configuration, 2 contract or data errors,
    /// 3 failed verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 1,
            CliError::Verification(_) => 3,
            CliError::Io { .. } | CliError::Input { .. } | CliError::Core(_) => 2,
        }
    }

    pub(crate) fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn input(path: &std::path::Path) -> impl FnOnce(moetrack::Error) -> CliError + '_ {
        move |source| CliError::Input {
            path: path.to_path_buf(),
            source,
        }
    }
}
