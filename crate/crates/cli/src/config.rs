// SPDX-License-Identifier: Apache-2.0

//! Experiment configuration: one TOML file with a section per module.

use std::path::{Path, PathBuf};

use pqrc_core::dynamics::{IntegratorConfig, Schedule};
use pqrc_core::learn::dataset::{DatasetConfig, ParameterRanges, Task};
use pqrc_core::learn::Hyperparams;
use pqrc_core::model::{build_reservoir, LatticeShape, ReservoirSpec};
use pqrc_core::oracle::MasterConfig;
use pqrc_core::sampler::{GridSpec, StateSpec};
use pqrc_core::C64;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub reservoir: ReservoirConfig,
    pub state: Option<StateSpec>,
    pub sampling: SamplingConfig,
    pub schedule: Schedule,
    pub integrator: IntegratorConfig,
    pub dataset: DatasetSection,
    pub training: TrainingSection,
    pub sweep: SweepSection,
    pub stability: StabilitySection,
    pub oracle: OracleSection,
    pub wigner: WignerSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn state(&self) -> CliResult<StateSpec> {
        let s = self.state.ok_or_else(|| CliError::Config("missing [state] section".into()))?;
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReservoirConfig {
    /// Load this spec file instead of generating one.
    pub file: Option<PathBuf>,
    pub n_modes: usize,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub kerr: f64,
    /// Real drive amplitude applied to every node.
    pub drive: f64,
    /// Build one mode with unit input weight, the given detuning and loss,
    /// instead of a random lattice.
    pub single_mode: bool,
    pub detuning: f64,
    pub loss: f64,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        ReservoirConfig {
            file: None,
            n_modes: 4,
            rows: None,
            cols: None,
            kerr: 0.05,
            drive: 0.5,
            single_mode: false,
            detuning: 0.0,
            loss: 1.0,
        }
    }
}

impl ReservoirConfig {
    /// Explicit `rows x cols`, else a square grid when `n_modes` is a perfect
    /// square, else a `1 x n_modes` chain.
    pub fn shape(&self) -> CliResult<LatticeShape> {
        match (self.rows, self.cols) {
            (Some(r), Some(c)) => Ok(LatticeShape::new(r, c)?),
            (None, None) => {
                let n = self.n_modes;
                let k = (n as f64).sqrt().round() as usize;
                if k * k == n && n > 0 {
                    Ok(LatticeShape::new(k, k)?)
                } else {
                    Ok(LatticeShape::chain(n)?)
                }
            }
            _ => Err(CliError::Config("reservoir rows and cols must be given together".into())),
        }
    }

    pub fn with_modes(&self, n: usize) -> Self {
        ReservoirConfig { n_modes: n, rows: None, cols: None, file: None, single_mode: false, ..self.clone() }
    }

    /// Load the configured file or build a fresh reservoir from `seed`.
    pub fn resolve(&self, seed: u64) -> CliResult<ReservoirSpec> {
        if let Some(path) = &self.file {
            return crate::formats::read_reservoir(path);
        }
        if self.single_mode {
            let spec = ReservoirSpec::single_mode(self.detuning, self.kerr, self.drive, self.loss)
                .with_input_weights(vec![1.0]);
            spec.validate()?;
            return Ok(spec);
        }
        Ok(build_reservoir(self.shape()?, self.kerr, self.drive, seed)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub count: usize,
    /// Cat grid override.
    pub grid_half_width: Option<f64>,
    pub grid_points: Option<usize>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { count: 10_000, grid_half_width: None, grid_points: None }
    }
}

impl SamplingConfig {
    pub fn grid(&self, state: &StateSpec) -> Option<GridSpec> {
        let beta = match state {
            StateSpec::Cat { beta, .. } => *beta,
            _ => return None,
        };
        let default = GridSpec::for_cat(beta);
        Some(GridSpec {
            half_width: self.grid_half_width.unwrap_or(default.half_width),
            points: self.grid_points.unwrap_or(default.points),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub task: Task,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub samples_per_state: usize,
    pub shared_noise: bool,
    pub divergence_flag: f64,
    pub ranges: ParameterRanges,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let p = DatasetConfig::paper(Task::Classify);
        DatasetSection {
            task: p.task,
            train_per_class: p.train_per_class,
            test_per_class: p.test_per_class,
            samples_per_state: p.samples_per_state,
            shared_noise: p.shared_noise,
            divergence_flag: p.divergence_flag,
            ranges: p.ranges,
        }
    }
}

impl DatasetSection {
    pub fn to_core(&self, schedule: Schedule, integrator: IntegratorConfig, seed: u64) -> DatasetConfig {
        DatasetConfig {
            task: self.task,
            train_per_class: self.train_per_class,
            test_per_class: self.test_per_class,
            samples_per_state: self.samples_per_state,
            schedule,
            integrator,
            ranges: self.ranges,
            shared_noise: self.shared_noise,
            divergence_flag: self.divergence_flag,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    /// Defaults to the task preset when absent.
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    /// 0 means full batch.
    pub batch_size: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Independent training runs (readout initializations).
    pub runs: usize,
    /// Also draw a fresh reservoir (and dataset) for every run.
    pub resample_reservoir: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            learning_rate: None,
            epochs: None,
            batch_size: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            runs: 3,
            resample_reservoir: false,
        }
    }
}

impl TrainingSection {
    pub fn hyperparams(&self, task: Task, seed: u64) -> Hyperparams {
        let base = match task {
            Task::Classify => Hyperparams::classification(),
            Task::PredictSqueezing => Hyperparams::regression(),
        };
        Hyperparams {
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: match self.batch_size {
                Some(0) => None,
                Some(b) => Some(b),
                None => base.batch_size,
            },
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Reservoir sizes for an accuracy-versus-N sweep; empty runs a single size.
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossSection {
    /// `(F, U)` at fixed loss.
    DriveKerr,
    /// `(F, gamma)` at fixed Kerr.
    DriveLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Axis {
    pub fn values(&self) -> CliResult<Vec<f64>> {
        if self.points == 0 || !(self.max >= self.min) {
            return Err(CliError::Config("axis needs points >= 1 and max >= min".into()));
        }
        if self.points == 1 {
            return Ok(vec![self.min]);
        }
        let h = (self.max - self.min) / (self.points - 1) as f64;
        Ok((0..self.points).map(|k| self.min + k as f64 * h).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    pub cross_section: CrossSection,
    pub drive: Axis,
    pub kerr: Axis,
    pub loss: Axis,
    /// Kerr used by the `drive_loss` cross-section.
    pub fixed_kerr: f64,
    /// Loss used by the `drive_kerr` cross-section.
    pub fixed_loss: f64,
    pub detuning: f64,
    pub trajectories: usize,
}

impl Default for StabilitySection {
    fn default() -> Self {
        StabilitySection {
            cross_section: CrossSection::DriveKerr,
            drive: Axis { min: 0.0, max: 5.0, points: 16 },
            kerr: Axis { min: 0.0, max: 1.0, points: 16 },
            loss: Axis { min: 0.2, max: 2.0, points: 16 },
            fixed_kerr: 0.1,
            fixed_loss: 1.0,
            detuning: 0.0,
            trajectories: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub dt: f64,
    pub trace_tolerance: f64,
    /// Fock levels per reservoir mode; 30 for one mode, 12 otherwise when absent.
    pub mode_dim: Option<usize>,
    /// Fock levels of the source; smallest passing the tail guard when absent.
    pub source_dim: Option<usize>,
    /// PPM trajectories for the comparison.
    pub trajectories: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        let m = MasterConfig::default();
        OracleSection {
            dt: m.dt,
            trace_tolerance: m.trace_tolerance,
            mode_dim: None,
            source_dim: None,
            trajectories: 10_000,
        }
    }
}

impl OracleSection {
    pub fn master(&self) -> MasterConfig {
        MasterConfig { dt: self.dt, trace_tolerance: self.trace_tolerance }
    }

    pub fn mode_dim(&self, n_modes: usize) -> usize {
        self.mode_dim.unwrap_or(if n_modes == 1 { 30 } else { 12 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WignerSection {
    pub q: Axis,
    pub p: Axis,
    pub dim: usize,
}

impl Default for WignerSection {
    fn default() -> Self {
        let a = Axis { min: -6.0, max: 6.0, points: 121 };
        WignerSection { q: a, p: a, dim: 40 }
    }
}

/// Parse `re` or `re,im` into a complex number.
pub fn parse_complex(s: &str) -> Result<C64, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let num = |t: &str| t.parse::<f64>().map_err(|e| format!("bad number '{t}': {e}"));
    match parts.as_slice() {
        [re] => Ok(C64::new(num(re)?, 0.0)),
        [re, im] => Ok(C64::new(num(re)?, num(im)?)),
        _ => Err(format!("expected 're' or 're,im', got '{s}'")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrip() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn sections_parse() {
        let c = ExperimentConfig::parse(
            r#"
            [reservoir]
            n_modes = 7
            kerr = 0.1
            [state]
            kind = "cat"
            beta = [1.2, 0.0]
            cat_phase = 0.0
            [schedule]
            t_relax = 10.0
            t_final = 20.0
            dt = 0.05
            record_stride = 2
            [dataset]
            task = "predict_squeezing"
            "#,
        )
        .unwrap();
        assert_eq!(c.reservoir.shape().unwrap(), LatticeShape { rows: 1, cols: 7 });
        assert_eq!(c.state().unwrap(), StateSpec::Cat { beta: C64::new(1.2, 0.0), phase: 0.0 });
        assert_eq!(c.schedule.record_stride, 2);
        assert_eq!(c.dataset.task, Task::PredictSqueezing);
        assert!(ExperimentConfig::parse("[reservoir]\nnmodes = 3\n").is_err());
    }

    #[test]
    fn square_counts_become_grids() {
        let r = ReservoirConfig { n_modes: 9, ..ReservoirConfig::default() };
        assert_eq!(r.shape().unwrap(), LatticeShape { rows: 3, cols: 3 });
    }

    #[test]
    fn complex_flags() {
        assert_eq!(parse_complex("1.5").unwrap(), C64::new(1.5, 0.0));
        assert_eq!(parse_complex("1, -2").unwrap(), C64::new(1.0, -2.0));
        assert!(parse_complex("a").is_err());
    }
}
