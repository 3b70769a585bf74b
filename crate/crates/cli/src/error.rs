// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use serde::Serialize;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, flags or input files.
    Config(String),
    Io(std::io::Error),
    Core(pqrc_core::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<pqrc_core::Error> for CliError {
    fn from(e: pqrc_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}

/// Machine-readable error line written to stderr.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub error: &'static str,
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if !e.is_config_error() => 3,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        use pqrc_core::Error as E;
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Core(E::InvalidArgument(_)) => "invalid_argument",
            CliError::Core(E::GridTruncation { .. }) => "grid_truncation",
            CliError::Core(E::FockTruncation { .. }) => "fock_truncation",
            CliError::Core(E::EnsembleFailure(_)) => "ensemble_failure",
            CliError::Core(E::TraceDrift { .. }) => "trace_drift",
            CliError::Core(E::TrainingDiverged(_)) => "training_diverged",
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord { error: self.kind(), message: self.to_string(), exit_code: self.exit_code() }
    }
}
