// SPDX-License-Identifier: Apache-2.0

//! Command-line front end for `pqrc_core`: experiment configs, file formats,
//! run manifests and parallel drivers.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod par;

pub use args::Cli;
pub use commands::{run, Report};
pub use error::{CliError, CliResult};
