// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pqrc_core::dynamics::Schedule;
use pqrc_core::learn::dataset::Task;
use pqrc_core::sampler::StateSpec;
use pqrc_core::C64;

use crate::config::{parse_complex, CrossSection, ExperimentConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Parser)]
#[command(name = "pqrc", version, about = "Positive-P quantum reservoir computing experiments")]
pub struct Cli {
    /// Master seed; every random stream of the run is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Experiment config (TOML). Flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Draw a reservoir and write its spec file.
    GenReservoir(GenReservoirArgs),
    /// Draw positive-P samples of an input state.
    SampleState(SampleStateArgs),
    /// Run the reservoir ensemble on a sample file and write occupations.
    Simulate(SimulateArgs),
    /// Generate a dataset, train readouts and write metrics.
    Pipeline(PipelineArgs),
    /// Convergent-trajectory fractions over a parameter grid.
    StabilityScan(StabilityArgs),
    /// Compare the positive-P ensemble with the Fock-space master equation.
    OracleCompare(OracleArgs),
    /// Wigner function of an input state on a grid.
    Wigner(WignerArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenReservoir(_) => "gen-reservoir",
            Command::SampleState(_) => "sample-state",
            Command::Simulate(_) => "simulate",
            Command::Pipeline(_) => "pipeline",
            Command::StabilityScan(_) => "stability-scan",
            Command::OracleCompare(_) => "oracle-compare",
            Command::Wigner(_) => "wigner",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ReservoirArgs {
    /// Use this reservoir spec file.
    #[arg(long)]
    pub reservoir: Option<PathBuf>,
    #[arg(long)]
    pub n_modes: Option<usize>,
    #[arg(long, requires = "cols")]
    pub rows: Option<usize>,
    #[arg(long, requires = "rows")]
    pub cols: Option<usize>,
    #[arg(long)]
    pub kerr: Option<f64>,
    #[arg(long)]
    pub drive: Option<f64>,
    /// One mode with unit input weight instead of a random lattice.
    #[arg(long)]
    pub single_mode: bool,
    /// Detuning of the single mode.
    #[arg(long)]
    pub detuning: Option<f64>,
    /// Loss of the single mode.
    #[arg(long)]
    pub loss: Option<f64>,
}

impl ReservoirArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        let r = &mut cfg.reservoir;
        if let Some(p) = &self.reservoir {
            r.file = Some(p.clone());
        }
        if let Some(n) = self.n_modes {
            r.n_modes = n;
            r.rows = None;
            r.cols = None;
        }
        if let (Some(a), Some(b)) = (self.rows, self.cols) {
            r.rows = Some(a);
            r.cols = Some(b);
            r.n_modes = a * b;
        }
        set(&mut r.kerr, self.kerr);
        set(&mut r.drive, self.drive);
        set(&mut r.detuning, self.detuning);
        set(&mut r.loss, self.loss);
        r.single_mode |= self.single_mode;
    }
}

fn set<T: Copy>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StateKind {
    Coherent,
    Thermal,
    Squeezed,
    Cat,
}

#[derive(Debug, Clone, Default, Args)]
pub struct StateArgs {
    /// Input state; replaces the config's [state] section.
    #[arg(long, value_enum)]
    pub kind: Option<StateKind>,
    /// Coherent or cat amplitude as `re` or `re,im`.
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    pub beta: Option<C64>,
    #[arg(long)]
    pub nbar: Option<f64>,
    /// Squeezing magnitude.
    #[arg(long)]
    pub r: Option<f64>,
    /// Squeezing angle.
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    /// Relative phase of the cat superposition (0 = even cat).
    #[arg(long, allow_hyphen_values = true)]
    pub cat_phase: Option<f64>,
}

impl StateArgs {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> CliResult<()> {
        let Some(kind) = self.kind else {
            if self.beta.is_some()
                || self.nbar.is_some()
                || self.r.is_some()
                || self.theta.is_some()
                || self.cat_phase.is_some()
            {
                return Err(CliError::Config("state parameters need --kind".into()));
            }
            return Ok(());
        };
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| CliError::Config(format!("--kind needs --{name}")));
        cfg.state = Some(match kind {
            StateKind::Coherent => StateSpec::Coherent {
                beta: self.beta.ok_or_else(|| CliError::Config("--kind coherent needs --beta".into()))?,
            },
            StateKind::Thermal => StateSpec::Thermal { nbar: need(self.nbar, "nbar")? },
            StateKind::Squeezed => {
                StateSpec::SqueezedVacuum { r: need(self.r, "r")?, theta: self.theta.unwrap_or(0.0) }
            }
            StateKind::Cat => StateSpec::Cat {
                beta: self.beta.ok_or_else(|| CliError::Config("--kind cat needs --beta".into()))?,
                phase: self.cat_phase.unwrap_or(0.0),
            },
        });
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ScheduleArgs {
    /// Length of the relaxation phase (source off).
    #[arg(long)]
    pub t_relax: Option<f64>,
    /// Length of the injection phase (source on).
    #[arg(long)]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Record every n-th step.
    #[arg(long)]
    pub record_stride: Option<usize>,
}

impl ScheduleArgs {
    pub fn apply(&self, s: &mut Schedule) {
        set(&mut s.t_relax, self.t_relax);
        set(&mut s.t_final, self.t_final);
        set(&mut s.dt, self.dt);
        set(&mut s.record_stride, self.record_stride);
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenReservoirArgs {
    #[command(flatten)]
    pub reservoir: ReservoirArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SampleStateArgs {
    #[command(flatten)]
    pub state: StateArgs,
    #[arg(long)]
    pub count: Option<usize>,
    /// Cat grid half-width.
    #[arg(long)]
    pub grid_half_width: Option<f64>,
    /// Cat grid points per axis.
    #[arg(long)]
    pub grid_points: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub reservoir: PathBuf,
    #[arg(long)]
    pub samples: PathBuf,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Classify,
    Regress,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Classify => Task::Classify,
            TaskArg::Regress => Task::PredictSqueezing,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[command(flatten)]
    pub reservoir: ReservoirArgs,
    /// Reservoir sizes to sweep, e.g. `2,3,4`.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub samples_per_state: Option<usize>,
    /// Draw a new reservoir and dataset for every run.
    #[arg(long)]
    pub resample_reservoir: bool,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CrossArg {
    DriveKerr,
    DriveLoss,
}

impl From<CrossArg> for CrossSection {
    fn from(c: CrossArg) -> Self {
        match c {
            CrossArg::DriveKerr => CrossSection::DriveKerr,
            CrossArg::DriveLoss => CrossSection::DriveLoss,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct StabilityArgs {
    #[arg(long, value_enum)]
    pub cross_section: Option<CrossArg>,
    #[arg(long)]
    pub trajectories: Option<usize>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub reservoir: ReservoirArgs,
    #[command(flatten)]
    pub state: StateArgs,
    /// Positive-P trajectories.
    #[arg(long)]
    pub trajectories: Option<usize>,
    /// Fock levels per reservoir mode.
    #[arg(long)]
    pub mode_dim: Option<usize>,
    /// Fock levels of the source.
    #[arg(long)]
    pub source_dim: Option<usize>,
    /// Master-equation RK4 step.
    #[arg(long)]
    pub oracle_dt: Option<f64>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

#[derive(Debug, Clone, Args)]
pub struct WignerArgs {
    #[command(flatten)]
    pub state: StateArgs,
    /// Fock truncation.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Grid half-width in both q and p.
    #[arg(long)]
    pub extent: Option<f64>,
    /// Grid points per axis.
    #[arg(long)]
    pub points: Option<usize>,
}
