// SPDX-License-Identifier: Apache-2.0

use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The tabulated cat distribution still has appreciable weight on the
    /// edge of the sampling grid.
    #[error(
        "sampling grid too small: boundary/peak density ratio {ratio:.3e} exceeds {limit:.0e} \
         (boundary mass {boundary_mass:.3e})"
    )]
    GridTruncation { ratio: f64, limit: f64, boundary_mass: f64 },

    #[error("Fock truncation d = {dim} leaves tail mass {tail:.3e}")]
    FockTruncation { dim: usize, tail: f64 },

    #[error("all {0} trajectories diverged")]
    EnsembleFailure(usize),

    #[error("trace drifted by {drift:.3e} at t = {time}")]
    TraceDrift { drift: f64, time: f64 },

    #[error("training diverged: non-finite loss at epoch {0}")]
    TrainingDiverged(usize),
}

impl Error {
    /// Whether the error stems from bad input rather than a numerical failure.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::InvalidArgument(_) | Error::GridTruncation { .. } | Error::FockTruncation { .. })
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
