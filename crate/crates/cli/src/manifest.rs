// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliResult;
use crate::formats::{sha256_file, write_json};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Everything needed to regenerate a command's outputs.
///
/// Outputs do not depend on the worker count; it is recorded for timing only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    /// Seeds derived from `seed` for individual parts of the run.
    pub derived_seeds: Vec<(String, u64)>,
    pub workers: usize,
    pub core_version: String,
    pub cli_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Effective configuration after command-line overrides, as TOML.
    pub config: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn digest(base: &Path, path: &Path) -> CliResult<FileDigest> {
    let rel = path.strip_prefix(base).unwrap_or(path);
    Ok(FileDigest {
        path: rel.display().to_string(),
        sha256: sha256_file(path)?,
        bytes: std::fs::metadata(path)?.len(),
    })
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, workers: usize, config: &ExperimentConfig) -> Self {
        RunManifest {
            command: command.into(),
            args: std::env::args().collect(),
            seed,
            derived_seeds: Vec::new(),
            workers,
            core_version: pqrc_core::VERSION.into(),
            cli_version: env!("CARGO_PKG_VERSION").into(),
            started_unix: unix_now(),
            finished_unix: 0,
            config: config.to_toml(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let d = digest(Path::new(""), path)?;
        self.inputs.push(d);
        Ok(())
    }

    /// Digest every output and write `<command>-manifest.json` into `out_dir`.
    pub fn finish(mut self, out_dir: &Path, outputs: &[PathBuf]) -> CliResult<PathBuf> {
        for p in outputs {
            self.outputs.push(digest(out_dir, p)?);
        }
        self.finished_unix = unix_now();
        let path = out_dir.join(format!("{}-manifest.json", self.command));
        write_json(&path, &self)?;
        Ok(path)
    }
}
