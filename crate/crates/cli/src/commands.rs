// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::path::PathBuf;

use pqrc_core::dynamics::{grid_drive_kerr, grid_drive_loss};
use pqrc_core::learn::dataset::{Dataset, Split, Task};
use pqrc_core::learn::{
    evaluate_classifier, evaluate_regressor, mse, target_variance, train_classifier, train_regressor, Hyperparams,
    ReadoutModel,
};
use pqrc_core::model::ReservoirSpec;
use pqrc_core::observables::{default_features, OccupationSeries};
use pqrc_core::oracle::{
    build_state_fock, evolve_master, minimal_truncation, wigner_grid, FockDensityMatrix, MAX_ORACLE_DIM,
};
use pqrc_core::rng::derive_seed;
use pqrc_core::sampler::{estimate_moment, sample_state};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{
    Cli, Command, GenReservoirArgs, OracleArgs, PipelineArgs, SampleStateArgs, SimulateArgs, StabilityArgs, WignerArgs,
};
use crate::config::{Axis, CrossSection, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::formats::{self, num, SampleHeader};
use crate::manifest::RunManifest;
use crate::par;

/// Index under the master seed for readout initializations.
const READOUT_SEED_INDEX: u64 = u64::MAX - 1;
/// Index under the master seed for oracle-compare source samples.
const COMPARE_SAMPLE_INDEX: u64 = u64::MAX - 2;

/// What a command wrote, plus a machine-readable summary for stdout.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub outputs: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub summary: Value,
}

struct Ctx {
    seed: u64,
    out_dir: PathBuf,
    manifest: RunManifest,
    outputs: Vec<PathBuf>,
}

impl Ctx {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out_dir.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn finish(mut self, cfg: &ExperimentConfig, summary: Value) -> CliResult<Report> {
        let cfg_path = self.path(&format!("{}-config.toml", self.manifest.command));
        std::fs::write(&cfg_path, cfg.to_toml())?;
        self.manifest.config = cfg.to_toml();
        let command = self.manifest.command.clone();
        let manifest = self.manifest.finish(&self.out_dir, &self.outputs)?;
        Ok(Report { command, outputs: self.outputs, manifest, summary })
    }
}

/// Run one parsed command line.
pub fn run(cli: &Cli) -> CliResult<Report> {
    let mut cfg = ExperimentConfig::load_or_default(cli.config.as_deref())?;
    std::fs::create_dir_all(&cli.out_dir)?;
    let name = cli.command.name();
    let mut manifest = RunManifest::new(name, cli.seed, cli.workers, &cfg);
    if let Some(p) = &cli.config {
        manifest.input(p)?;
    }
    let mut ctx = Ctx { seed: cli.seed, out_dir: cli.out_dir.clone(), manifest, outputs: Vec::new() };
    let command = cli.command.clone();
    let summary = par::with_workers(cli.workers, || -> CliResult<Value> {
        match &command {
            Command::GenReservoir(a) => gen_reservoir(&mut ctx, &mut cfg, a),
            Command::SampleState(a) => sample_state_cmd(&mut ctx, &mut cfg, a),
            Command::Simulate(a) => simulate(&mut ctx, &mut cfg, a),
            Command::Pipeline(a) => pipeline(&mut ctx, &mut cfg, a),
            Command::StabilityScan(a) => stability_scan(&mut ctx, &mut cfg, a),
            Command::OracleCompare(a) => oracle_compare(&mut ctx, &mut cfg, a),
            Command::Wigner(a) => wigner(&mut ctx, &mut cfg, a),
        }
    })??;
    ctx.finish(&cfg, summary)
}

fn gen_reservoir(ctx: &mut Ctx, cfg: &mut ExperimentConfig, a: &GenReservoirArgs) -> CliResult<Value> {
    a.reservoir.apply(cfg);
    cfg.reservoir.file = None;
    let spec = cfg.reservoir.resolve(ctx.seed)?;
    let path = ctx.path("reservoir.json");
    formats::write_reservoir(&path, &spec)?;
    Ok(json!({ "n_modes": spec.n_modes, "rows": spec.shape.rows, "cols": spec.shape.cols, "eta": spec.eta }))
}

fn sample_state_cmd(ctx: &mut Ctx, cfg: &mut ExperimentConfig, a: &SampleStateArgs) -> CliResult<Value> {
    a.state.apply(cfg)?;
    if let Some(c) = a.count {
        cfg.sampling.count = c;
    }
    if a.grid_half_width.is_some() {
        cfg.sampling.grid_half_width = a.grid_half_width;
    }
    if a.grid_points.is_some() {
        cfg.sampling.grid_points = a.grid_points;
    }
    let state = cfg.state()?;
    let count = cfg.sampling.count;
    let samples = sample_state(&state, count, ctx.seed, cfg.sampling.grid(&state))?;
    let path = ctx.path("samples.bin");
    formats::write_samples(&path, &SampleHeader { state, count, seed: ctx.seed }, &samples)?;
    let n = estimate_moment(&samples, 1, 1)?;
    Ok(json!({
        "state": state.kind(),
        "count": count,
        "mean_n": n.mean.re,
        "mean_n_se": n.se_re,
        "mean_n_exact": state.mean_occupation(),
    }))
}

fn simulate(ctx: &mut Ctx, cfg: &mut ExperimentConfig, a: &SimulateArgs) -> CliResult<Value> {
    a.schedule.apply(&mut cfg.schedule);
    cfg.reservoir.file = Some(a.reservoir.clone());
    let spec = formats::read_reservoir(&a.reservoir)?;
    let (header, samples) = formats::read_samples(&a.samples)?;
    ctx.manifest.input(&a.reservoir)?;
    ctx.manifest.input(&a.samples)?;
    cfg.state = Some(header.state);
    let run = par::run_ensemble_par(&spec, &samples, &cfg.schedule, &cfg.integrator, ctx.seed)?;
    let path = ctx.path("occupation.csv");
    formats::write_occupation(&path, &run.series)?;
    let features = default_features(&run.series)?;
    Ok(json!({
        "trajectories": run.trajectories,
        "diverged": run.diverged,
        "divergence_fraction": run.series.divergence_fraction,
        "features": features,
    }))
}

fn stability_scan(ctx: &mut Ctx, cfg: &mut ExperimentConfig, a: &StabilityArgs) -> CliResult<Value> {
    a.schedule.apply(&mut cfg.schedule);
    let s = &mut cfg.stability;
    if let Some(c) = a.cross_section {
        s.cross_section = c.into();
    }
    if let Some(t) = a.trajectories {
        s.trajectories = t;
    }
    let drives = s.drive.values()?;
    let points = match s.cross_section {
        CrossSection::DriveKerr => grid_drive_kerr(&drives, &s.kerr.values()?, s.fixed_loss, s.detuning),
        CrossSection::DriveLoss => grid_drive_loss(&drives, &s.loss.values()?, s.fixed_kerr, s.detuning),
    };
    let results = par::stability_scan_par(&points, s.trajectories, &cfg.schedule, &cfg.integrator, ctx.seed)?;
    let path = ctx.path("stability.csv");
    formats::write_stability(&path, &results)?;
    let min = results.iter().map(|r| r.fraction).fold(f64::INFINITY, f64::min);
    let below = results.iter().filter(|r| r.fraction < 1.0).count();
    Ok(json!({ "points": results.len(), "min_fraction": min, "points_below_one": below }))
}

/// Composite Hilbert-space size of the oracle for `n` modes plus a source.
fn oracle_dim(mode_dim: usize, n_modes: usize, source_dim: usize) -> Option<usize> {
    mode_dim.checked_pow(n_modes as u32)?.checked_mul(source_dim)
}

/// Per-record z-scores `|ppm - oracle| / se`; an exact match with zero spread scores 0.
pub fn z_scores(ppm: &OccupationSeries, oracle: &OccupationSeries) -> Vec<Vec<f64>> {
    ppm.mean_n
        .iter()
        .zip(&ppm.se_n)
        .zip(&oracle.mean_n)
        .map(|((m, s), o)| {
            m.iter()
                .zip(s)
                .zip(o)
                .map(|((m, s), o)| {
                    let d = (m - o).abs();
                    if d == 0.0 {
                        0.0
                    } else {
                        d / s
                    }
                })
                .collect()
        })
        .collect()
}

fn oracle_compare(ctx: &mut Ctx, cfg: &mut ExperimentConfig, a: &OracleArgs) -> CliResult<Value> {
    a.reservoir.apply(cfg);
    a.state.apply(cfg)?;
    a.schedule.apply(&mut cfg.schedule);
    let o = &mut cfg.oracle;
    if let Some(t) = a.trajectories {
        o.trajectories = t;
    }
    if a.mode_dim.is_some() {
        o.mode_dim = a.mode_dim;
    }
    if a.source_dim.is_some() {
        o.source_dim = a.source_dim;
    }
    if let Some(dt) = a.oracle_dt {
        o.dt = dt;
    }
    let state = cfg.state()?;
    let spec = cfg.reservoir.resolve(ctx.seed)?;
    if let Some(p) = &cfg.reservoir.file {
        ctx.manifest.input(p)?;
    }
    let o = cfg.oracle;
    let mode_dim = o.mode_dim(spec.n_modes);
    let source_dim = match o.source_dim {
        Some(d) => d,
        None => minimal_truncation(&state, 200)?,
    };
    let dim = oracle_dim(mode_dim, spec.n_modes, source_dim);
    if dim.is_none_or(|d| d > MAX_ORACLE_DIM) {
        let estimate = (mode_dim as f64).powi(spec.n_modes as i32) * source_dim as f64;
        return Err(CliError::Config(format!(
            "oracle needs dimension {mode_dim}^{} x {source_dim} = {estimate:.3e} (density matrix {:.3e} bytes), \
             above the limit of {MAX_ORACLE_DIM}; reduce --mode-dim or the reservoir size",
            spec.n_modes,
            estimate * estimate * 16.0,
        )));
    }
    let sample_seed = derive_seed(ctx.seed, COMPARE_SAMPLE_INDEX);
    ctx.manifest.derived_seeds.push(("source_samples".into(), sample_seed));
    let samples = sample_state(&state, o.trajectories, sample_seed, cfg.sampling.grid(&state))?;
    let ppm = par::run_ensemble_par(&spec, &samples, &cfg.schedule, &cfg.integrator, ctx.seed)?;
    let rho0 = FockDensityMatrix::vacuum(&vec![mode_dim; spec.n_modes]);
    let src = build_state_fock(&state, source_dim)?;
    let exact = evolve_master(&rho0, &spec, Some(&src), &cfg.schedule, &o.master())?;
    let z = z_scores(&ppm.series, &exact.series);
    let path = ctx.path("oracle_compare.csv");
    formats::write_oracle_compare(&path, &ppm, &exact.series, &z)?;

    let mut max_dev = 0.0f64;
    for (p, e) in ppm.series.mean_n.iter().zip(&exact.series.mean_n) {
        for (x, y) in p.iter().zip(e) {
            max_dev = max_dev.max((x - y).abs());
        }
    }
    let flat: Vec<f64> = z.iter().flatten().copied().collect();
    let max_z = flat.iter().copied().fold(0.0, f64::max);
    let within = flat.iter().filter(|&&v| v <= 3.0).count() as f64 / flat.len() as f64;
    Ok(json!({
        "oracle_dim": dim,
        "mode_dim": mode_dim,
        "source_dim": source_dim,
        "trajectories": ppm.trajectories,
        "divergence_fraction": ppm.series.divergence_fraction,
        "max_abs_deviation": max_dev,
        "max_z": max_z,
        "fraction_within_3se": within,
        "max_trace_drift": exact.max_trace_drift,
        "max_top_level_population": exact.max_top_level_population,
    }))
}

fn wigner(ctx: &mut Ctx, cfg: &mut ExperimentConfig, a: &WignerArgs) -> CliResult<Value> {
    a.state.apply(cfg)?;
    let w = &mut cfg.wigner;
    if let Some(d) = a.dim {
        w.dim = d;
    }
    if let Some(e) = a.extent {
        w.q = Axis { min: -e, max: e, ..w.q };
        w.p = Axis { min: -e, max: e, ..w.p };
    }
    if let Some(n) = a.points {
        w.q.points = n;
        w.p.points = n;
    }
    let state = cfg.state()?;
    let rho = build_state_fock(&state, cfg.wigner.dim)?;
    let grid = wigner_grid(&rho, &cfg.wigner.q.values()?, &cfg.wigner.p.values()?)?;
    let path = ctx.path("wigner.csv");
    formats::write_wigner(&path, &grid)?;
    let all = grid.values.iter().flatten();
    let min = all.clone().copied().fold(f64::INFINITY, f64::min);
    let max = all.copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(json!({
        "state": state.kind(),
        "normalization": grid.normalization,
        "normalization_warning": grid.warning,
        "min": min,
        "max": max,
    }))
}

#[derive(Serialize)]
struct ModelArtifact<'a> {
    task: Task,
    n_modes: usize,
    reservoir_seed: Option<u64>,
    dataset_digest: String,
    hyperparams: Hyperparams,
    model: &'a ReadoutModel,
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn pipeline(ctx: &mut Ctx, cfg: &mut ExperimentConfig, a: &PipelineArgs) -> CliResult<Value> {
    if let Some(t) = a.task {
        cfg.dataset.task = t.into();
    }
    a.reservoir.apply(cfg);
    a.schedule.apply(&mut cfg.schedule);
    if let Some(s) = &a.sizes {
        cfg.sweep.sizes = s.clone();
    }
    let d = &mut cfg.dataset;
    for (dst, v) in [
        (&mut d.train_per_class, a.train_per_class),
        (&mut d.test_per_class, a.test_per_class),
        (&mut d.samples_per_state, a.samples_per_state),
    ] {
        if let Some(v) = v {
            *dst = v;
        }
    }
    if let Some(r) = a.runs {
        cfg.training.runs = r;
    }
    if a.epochs.is_some() {
        cfg.training.epochs = a.epochs;
    }
    cfg.training.resample_reservoir |= a.resample_reservoir;
    let task = cfg.dataset.task;
    let runs = cfg.training.runs;
    if runs == 0 {
        return Err(CliError::Config("training.runs must be >= 1".into()));
    }
    let sweep = !cfg.sweep.sizes.is_empty();
    let sizes = if sweep { cfg.sweep.sizes.clone() } else { vec![cfg.reservoir.n_modes] };
    if sweep && cfg.reservoir.file.is_some() {
        return Err(CliError::Config("a size sweep cannot use a fixed reservoir file".into()));
    }
    let resample = cfg.training.resample_reservoir;
    let classes = cfg.dataset.to_core(cfg.schedule, cfg.integrator, ctx.seed).classes();

    let mut rows = Vec::new();
    let mut per_size: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut flagged = 0usize;
    for &n in &sizes {
        let rcfg = if sweep { cfg.reservoir.with_modes(n) } else { cfg.reservoir.clone() };
        let mut cached: Option<(ReservoirSpec, Dataset)> = None;
        for run in 0..runs {
            let data_seed = if resample { derive_seed(ctx.seed, run as u64) } else { ctx.seed };
            let tag = if resample { format!("N{n}_run{run}") } else { format!("N{n}") };
            if resample || cached.is_none() {
                let spec = rcfg.resolve(data_seed)?;
                let dcfg = cfg.dataset.to_core(cfg.schedule, cfg.integrator, data_seed);
                let data = par::generate_dataset_par(&spec, &dcfg)?;
                flagged += data.records.iter().filter(|r| r.flagged).count();
                let p = ctx.path(&format!("reservoir_{tag}.json"));
                formats::write_reservoir(&p, &spec)?;
                let p = ctx.path(&format!("dataset_{tag}.csv"));
                formats::write_dataset(&p, &data)?;
                ctx.manifest.derived_seeds.push((format!("dataset_{tag}"), data_seed));
                cached = Some((spec, data));
            }
            let (spec, data) = cached.as_ref().expect("dataset generated");
            let readout_seed = derive_seed(derive_seed(ctx.seed, READOUT_SEED_INDEX), run as u64);
            ctx.manifest.derived_seeds.push((format!("readout_N{n}_run{run}"), readout_seed));
            let hp = cfg.training.hyperparams(task, readout_seed);
            let name = format!("N{n}_run{run}");
            let (outcome, row, score) = match task {
                Task::Classify => {
                    let (tr, te) = (data.class_split(Split::Train), data.class_split(Split::Test));
                    let out = train_classifier(&tr, &te, classes, &hp)?;
                    let m = evaluate_classifier(&out.model, &te, classes)?;
                    let train_acc = evaluate_classifier(&out.model, &tr, classes)?.accuracy;
                    let p = ctx.path(&format!("confusion_{name}.csv"));
                    formats::write_confusion(&p, &m)?;
                    let row = vec![n.to_string(), run.to_string(), num(train_acc), num(m.accuracy)];
                    (out, row, m.accuracy)
                }
                Task::PredictSqueezing => {
                    let (tr, te) = (data.regression_split(Split::Train)?, data.regression_split(Split::Test)?);
                    let out = train_regressor(&tr, &te, &hp)?;
                    let m = evaluate_regressor(&out.model, &te)?;
                    let train_pred: Vec<_> = tr.features.iter().map(|x| out.model.predict_complex(x)).collect();
                    let p = ctx.path(&format!("regression_{name}.csv"));
                    formats::write_regression_table(&p, data, Split::Test, &m)?;
                    let var = target_variance(&tr.targets);
                    let row =
                        vec![n.to_string(), run.to_string(), num(mse(&train_pred, &tr.targets)), num(m.mse), num(var)];
                    (out, row, m.mse)
                }
            };
            let p = ctx.path(&format!("curve_{name}.csv"));
            formats::write_curve(&p, &outcome.curve)?;
            let p = ctx.path(&format!("model_{name}.json"));
            let artifact = ModelArtifact {
                task,
                n_modes: n,
                reservoir_seed: spec.seed,
                dataset_digest: format!("{:016x}", data.digest()),
                hyperparams: hp,
                model: &outcome.model,
            };
            formats::write_json(&p, &artifact)?;
            rows.push(row);
            per_size.entry(n).or_default().push(score);
        }
    }

    let metric = if task == Task::Classify { "accuracy" } else { "mse" };
    let summary_rows: Vec<Vec<String>> = per_size
        .iter()
        .map(|(n, v)| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            vec![n.to_string(), v.len().to_string(), num(mean), num(sample_std(v)), num(lo), num(hi)]
        })
        .collect();
    match task {
        Task::Classify => {
            let p = ctx.path("accuracy.csv");
            formats::write_table(&p, &["n_modes", "run", "train_accuracy", "test_accuracy"], &rows)?;
            let p = ctx.path("accuracy_vs_n.csv");
            formats::write_table(
                &p,
                &["n_modes", "runs", "mean_accuracy", "std_accuracy", "min", "max"],
                &summary_rows,
            )?;
        }
        Task::PredictSqueezing => {
            let p = ctx.path("regression_summary.csv");
            formats::write_table(&p, &["n_modes", "run", "train_mse", "test_mse", "train_target_variance"], &rows)?;
            let p = ctx.path("mse_vs_n.csv");
            formats::write_table(&p, &["n_modes", "runs", "mean_mse", "std_mse", "min", "max"], &summary_rows)?;
        }
    }
    let by_size: Vec<Value> = per_size.iter().map(|(n, v)| json!({ "n_modes": n, metric: v })).collect();
    Ok(json!({ "task": task, "metric": metric, "results": by_size, "flagged_states": flagged }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_dimension_overflow_is_caught() {
        assert_eq!(oracle_dim(12, 2, 12), Some(1728));
        assert_eq!(oracle_dim(1000, 10, 10), None);
    }

    #[test]
    fn std_of_runs() {
        assert_eq!(sample_std(&[1.0]), 0.0);
        assert!((sample_std(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
    }
}
