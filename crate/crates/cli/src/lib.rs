//! Command implementations behind the `aniscert` binary: train
//! classifiers and noise-parameter generators, run certification and
//! prediction campaigns, dump pattern maps, and run the oracle
//! verification suite.

pub mod commands;
pub mod config;

pub use commands::{cmd_certify, cmd_pattern_dump, cmd_predict, cmd_train, cmd_verify};
pub use config::{Config, DatasetSource};

/// Command-level failures, mapped to process exit codes by `main`:
/// config errors exit 1, runtime errors 2, verification failures 3.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("verification failed: {0} check(s) red")]
    Verification(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

pub(crate) fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::CliError;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 1);
        assert_eq!(CliError::Runtime("x".into()).exit_code(), 2);
        assert_eq!(CliError::Verification(2).exit_code(), 3);
    }
}
