use std::fmt::Display;

/// Command failure, split by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config file or endpoint settings. Exit status 1.
    #[error("configuration error: {0}")]
    Config(String),
    /// Missing or malformed inputs. Exit status 2.
    #[error("data error: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

pub(crate) fn data(e: impl Display) -> CliError {
    CliError::Data(e.to_string())
}

pub(crate) fn config(e: impl Display) -> CliError {
    CliError::Config(e.to_string())
}
