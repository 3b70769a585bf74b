// SPDX-License-Identifier: Apache-2.0

//! Rayon fan-out over ensemble chunks, dataset states and stability points.
//!
//! Work items are computed in parallel and reduced in index order, so results
//! are bit-identical to the serial drivers in `pqrc_core` for any worker count.

use pqrc_core::dynamics::{
    chunk_ranges, ensemble_chunk, relax_chunk, stability_point, EnsembleAccumulator, EnsembleResult, IntegratorConfig,
    RelaxedEnsemble, Schedule, StabilityPoint, StabilityResult,
};
use pqrc_core::learn::dataset::{plan, shared_relaxation_seed, simulate_record_with, Dataset, DatasetConfig};
use pqrc_core::model::ReservoirSpec;
use pqrc_core::sampler::PhaseSampleSet;
use pqrc_core::Result;
use rayon::prelude::*;

use crate::error::{CliError, CliResult};

/// Run `f` on a pool of `workers` threads (0 picks the rayon default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Parallel [`pqrc_core::dynamics::run_ensemble`].
pub fn run_ensemble_par(
    spec: &ReservoirSpec,
    sources: &PhaseSampleSet,
    schedule: &Schedule,
    config: &IntegratorConfig,
    seed: u64,
) -> Result<EnsembleResult> {
    if sources.is_empty() {
        return Err(pqrc_core::Error::InvalidArgument("source sample set is empty".into()));
    }
    let times = schedule.record_times()?;
    let parts = chunk_ranges(sources.len())
        .into_par_iter()
        .map(|r| ensemble_chunk(spec, sources, schedule, config, seed, r))
        .collect::<Result<Vec<_>>>()?;
    let mut total = EnsembleAccumulator::new(times.len(), spec.n_modes);
    for p in &parts {
        total.merge(p);
    }
    total.finish(times, schedule.t_relax)
}

/// Parallel [`pqrc_core::dynamics::relax_ensemble`].
pub fn relax_ensemble_par(
    spec: &ReservoirSpec,
    schedule: &Schedule,
    config: &IntegratorConfig,
    seed: u64,
    count: usize,
) -> Result<RelaxedEnsemble> {
    let chunks = chunk_ranges(count)
        .into_par_iter()
        .map(|r| relax_chunk(spec, schedule, config, seed, r))
        .collect::<Result<Vec<_>>>()?;
    RelaxedEnsemble::from_chunks(spec, schedule, config, seed, chunks)
}

/// Parallel [`pqrc_core::learn::dataset::generate_dataset`].
pub fn generate_dataset_par(spec: &ReservoirSpec, config: &DatasetConfig) -> Result<Dataset> {
    spec.validate()?;
    let planned = plan(config)?;
    let relaxed = match shared_relaxation_seed(spec, config)? {
        Some(seed) => {
            Some(relax_ensemble_par(spec, &config.schedule, &config.integrator, seed, config.samples_per_state)?)
        }
        None => None,
    };
    let records = planned
        .par_iter()
        .map(|p| simulate_record_with(spec, p, config, relaxed.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { task: config.task, records })
}

/// Parallel [`pqrc_core::dynamics::stability_scan`].
pub fn stability_scan_par(
    points: &[StabilityPoint],
    trajectories: usize,
    schedule: &Schedule,
    config: &IntegratorConfig,
    seed: u64,
) -> Result<Vec<StabilityResult>> {
    points
        .par_iter()
        .enumerate()
        .map(|(i, &p)| stability_point(p, i as u64, trajectories, schedule, config, seed))
        .collect()
}
