// SPDX-License-Identifier: Apache-2.0

//! Labeled feature datasets: draw input states, push each through the
//! reservoir and reduce the occupations to a feature vector.

use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ClassSplit, RegressionSplit};
use crate::dynamics::{
    relax_ensemble, run_ensemble, run_ensemble_relaxed, IntegratorConfig, RelaxedEnsemble, Schedule,
};
use crate::error::{invalid, Result};
use crate::model::ReservoirSpec;
use crate::observables::{default_features, feature_uncertainty};
use crate::rng::{derive_seed, stream, Purpose};
use crate::sampler::{sample_state, StateSpec};
use crate::C64;

/// Class order of the classification task.
pub const CLASS_NAMES: [&str; 3] = ["cat", "squeezed", "coherent"];

/// Seed index reserved for the reservoir noise shared by all states.
const SHARED_NOISE_INDEX: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classify,
    PredictSqueezing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Open intervals the state parameters are drawn from uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParameterRanges {
    pub cat_amplitude: (f64, f64),
    pub cat_angle: (f64, f64),
    pub cat_phase: f64,
    pub squeeze_r: (f64, f64),
    pub squeeze_theta: (f64, f64),
    pub coherent_amplitude: (f64, f64),
    pub coherent_angle: (f64, f64),
}

impl Default for ParameterRanges {
    fn default() -> Self {
        ParameterRanges {
            cat_amplitude: (1.12, 1.38),
            cat_angle: (0.0, FRAC_PI_2),
            cat_phase: 0.0,
            squeeze_r: (0.9, 1.1),
            squeeze_theta: (0.0, FRAC_PI_2),
            coherent_amplitude: (1.03, 1.34),
            coherent_angle: (0.0, FRAC_PI_2),
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

impl ParameterRanges {
    /// Draw a state of `class` (index into [`CLASS_NAMES`]).
    pub fn draw<R: Rng>(&self, class: usize, rng: &mut R) -> StateSpec {
        match class {
            0 => {
                let a = uniform(rng, self.cat_amplitude);
                let phi = uniform(rng, self.cat_angle);
                StateSpec::Cat { beta: C64::from_polar(a, phi), phase: self.cat_phase }
            }
            1 => {
                let r = uniform(rng, self.squeeze_r);
                let theta = uniform(rng, self.squeeze_theta);
                StateSpec::SqueezedVacuum { r, theta }
            }
            _ => {
                let a = uniform(rng, self.coherent_amplitude);
                let phi = uniform(rng, self.coherent_angle);
                StateSpec::Coherent { beta: C64::from_polar(a, phi) }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub task: Task,
    /// Per class for classification; total for regression.
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Positive-P samples (trajectories) per state.
    pub samples_per_state: usize,
    pub schedule: Schedule,
    pub integrator: IntegratorConfig,
    pub ranges: ParameterRanges,
    /// All states see the same reservoir noise realizations.
    pub shared_noise: bool,
    /// States whose divergence fraction exceeds this are flagged.
    pub divergence_flag: f64,
    pub seed: u64,
}

impl DatasetConfig {
    /// Published sizes: 200 train and 50 test states per class.
    pub fn paper(task: Task) -> Self {
        DatasetConfig {
            task,
            train_per_class: 200,
            test_per_class: 50,
            samples_per_state: 10_000,
            schedule: Schedule::default(),
            integrator: IntegratorConfig::default(),
            ranges: ParameterRanges::default(),
            shared_noise: true,
            divergence_flag: 0.1,
            seed: 0,
        }
    }

    pub fn classes(&self) -> usize {
        match self.task {
            Task::Classify => 3,
            Task::PredictSqueezing => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_per_class == 0 || self.samples_per_state == 0 {
            return Err(invalid("dataset needs train_per_class >= 1 and samples_per_state >= 1"));
        }
        self.schedule.steps()?;
        Ok(())
    }

    fn noise_seed(&self, index: u64) -> u64 {
        derive_seed(self.seed, if self.shared_noise { SHARED_NOISE_INDEX } else { index })
    }
}

/// A state scheduled for simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedState {
    pub index: usize,
    pub split: Split,
    pub class: usize,
    pub state: StateSpec,
    pub sample_seed: u64,
    pub noise_seed: u64,
}

impl PlannedState {
    pub fn target(&self) -> Option<C64> {
        match self.state {
            StateSpec::SqueezedVacuum { r, theta } => Some(C64::from_polar(r, 2.0 * theta)),
            _ => None,
        }
    }
}

/// Every state of the dataset: train records (class-major), then test records.
pub fn plan(config: &DatasetConfig) -> Result<Vec<PlannedState>> {
    config.validate()?;
    let classes = config.classes();
    let mut out = Vec::new();
    for (split, per) in [(Split::Train, config.train_per_class), (Split::Test, config.test_per_class)] {
        for c in 0..classes {
            for _ in 0..per {
                let index = out.len();
                let mut rng = stream(config.seed, Purpose::StateParams, index as u64);
                let class = if config.task == Task::Classify { c } else { 1 };
                out.push(PlannedState {
                    index,
                    split,
                    class,
                    state: config.ranges.draw(class, &mut rng),
                    sample_seed: derive_seed(config.seed, index as u64),
                    noise_seed: config.noise_seed(index as u64),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub index: usize,
    pub split: Split,
    pub class: usize,
    pub state: StateSpec,
    pub features: Vec<f64>,
    pub feature_se: Vec<f64>,
    pub divergence_fraction: f64,
    pub flagged: bool,
    pub sample_seed: u64,
    pub noise_seed: u64,
}

impl FeatureRecord {
    pub fn target(&self) -> Option<C64> {
        match self.state {
            StateSpec::SqueezedVacuum { r, theta } => Some(C64::from_polar(r, 2.0 * theta)),
            _ => None,
        }
    }
}

/// Sample, simulate and reduce one planned state.
pub fn simulate_record(spec: &ReservoirSpec, planned: &PlannedState, config: &DatasetConfig) -> Result<FeatureRecord> {
    simulate_record_with(spec, planned, config, None)
}

/// [`simulate_record`], resuming from `relaxed` when it was built with the
/// state's noise seed.
pub fn simulate_record_with(
    spec: &ReservoirSpec,
    planned: &PlannedState,
    config: &DatasetConfig,
    relaxed: Option<&RelaxedEnsemble>,
) -> Result<FeatureRecord> {
    let samples = sample_state(&planned.state, config.samples_per_state, planned.sample_seed, None)?;
    let run = match relaxed {
        Some(r) if r.seed() == planned.noise_seed && r.len() >= samples.len() => {
            run_ensemble_relaxed(spec, r, &samples)?
        }
        _ => run_ensemble(spec, &samples, &config.schedule, &config.integrator, planned.noise_seed)?,
    };
    let series = &run.series;
    let features = default_features(series)?;
    let feature_se = feature_uncertainty(series, series.injection_window())?;
    Ok(FeatureRecord {
        index: planned.index,
        split: planned.split,
        class: planned.class,
        state: planned.state,
        features,
        feature_se,
        divergence_fraction: series.divergence_fraction,
        flagged: series.divergence_fraction > config.divergence_flag,
        sample_seed: planned.sample_seed,
        noise_seed: planned.noise_seed,
    })
}

/// Largest relaxation cache built automatically.
pub const RELAX_CACHE_LIMIT: usize = 1 << 30;

/// Noise seed shared by every state, when the relaxation phase can be cached
/// within [`RELAX_CACHE_LIMIT`].
pub fn shared_relaxation_seed(spec: &ReservoirSpec, config: &DatasetConfig) -> Result<Option<u64>> {
    if !config.shared_noise {
        return Ok(None);
    }
    let bytes = RelaxedEnsemble::estimate_bytes(spec.n_modes, &config.schedule, config.samples_per_state)?;
    Ok((bytes <= RELAX_CACHE_LIMIT).then(|| config.noise_seed(0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub task: Task,
    pub records: Vec<FeatureRecord>,
}

/// Simulate every planned state in order.
pub fn generate_dataset(spec: &ReservoirSpec, config: &DatasetConfig) -> Result<Dataset> {
    spec.validate()?;
    let planned = plan(config)?;
    let relaxed = match shared_relaxation_seed(spec, config)? {
        Some(seed) => Some(relax_ensemble(spec, &config.schedule, &config.integrator, seed, config.samples_per_state)?),
        None => None,
    };
    let records =
        planned.iter().map(|p| simulate_record_with(spec, p, config, relaxed.as_ref())).collect::<Result<Vec<_>>>()?;
    Ok(Dataset { task: config.task, records })
}

/// 64-bit FNV-1a.
#[derive(Debug, Clone, Copy)]
pub struct Fnv64(u64);

impl Default for Fnv64 {
    fn default() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv64 {
    pub fn bytes(&mut self, b: &[u8]) {
        for &x in b {
            self.0 ^= x as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_bits().to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

fn hash_state(h: &mut Fnv64, s: &StateSpec) {
    match *s {
        StateSpec::Coherent { beta } => {
            h.u64(0);
            h.f64(beta.re);
            h.f64(beta.im);
        }
        StateSpec::Thermal { nbar } => {
            h.u64(1);
            h.f64(nbar);
        }
        StateSpec::SqueezedVacuum { r, theta } => {
            h.u64(2);
            h.f64(r);
            h.f64(theta);
        }
        StateSpec::Cat { beta, phase } => {
            h.u64(3);
            h.f64(beta.re);
            h.f64(beta.im);
            h.f64(phase);
        }
    }
}

impl Dataset {
    /// Hash over every record's bits.
    pub fn digest(&self) -> u64 {
        let mut h = Fnv64::default();
        h.u64(self.task as u64);
        for r in &self.records {
            h.u64(r.index as u64);
            h.u64(r.split as u64);
            h.u64(r.class as u64);
            hash_state(&mut h, &r.state);
            for v in r.features.iter().chain(&r.feature_se) {
                h.f64(*v);
            }
            h.f64(r.divergence_fraction);
        }
        h.finish()
    }

    fn split_records(&self, split: Split) -> impl Iterator<Item = &FeatureRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn class_split(&self, split: Split) -> ClassSplit {
        let (features, labels) = self.split_records(split).map(|r| (r.features.clone(), r.class)).unzip();
        ClassSplit { features, labels }
    }

    pub fn regression_split(&self, split: Split) -> Result<RegressionSplit> {
        let mut out = RegressionSplit::default();
        for r in self.split_records(split) {
            let t = r.target().ok_or_else(|| invalid("regression records must be squeezed states"))?;
            out.features.push(r.features.clone());
            out.targets.push(t);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_is_balanced_and_in_range() {
        let mut cfg = DatasetConfig::paper(Task::Classify);
        cfg.train_per_class = 4;
        cfg.test_per_class = 2;
        let p = plan(&cfg).unwrap();
        assert_eq!(p.len(), 18);
        for c in 0..3 {
            assert_eq!(p.iter().filter(|s| s.class == c && s.split == Split::Train).count(), 4);
            assert_eq!(p.iter().filter(|s| s.class == c && s.split == Split::Test).count(), 2);
        }
        for s in &p {
            match s.state {
                StateSpec::Cat { beta, phase } => {
                    assert!(beta.norm() > 1.12 && beta.norm() < 1.38 && phase == 0.0);
                    assert!(beta.arg() >= 0.0 && beta.arg() < FRAC_PI_2);
                }
                StateSpec::SqueezedVacuum { r, theta } => assert!(r > 0.9 && r < 1.1 && theta < FRAC_PI_2),
                StateSpec::Coherent { beta } => assert!(beta.norm() > 1.03 && beta.norm() < 1.34),
                _ => panic!("unexpected state"),
            }
        }
        assert_eq!(p, plan(&cfg).unwrap());
        assert!(p.windows(2).all(|w| w[0].noise_seed == w[1].noise_seed));
    }

    #[test]
    fn regression_plan_is_squeezed() {
        let mut cfg = DatasetConfig::paper(Task::PredictSqueezing);
        cfg.train_per_class = 5;
        cfg.test_per_class = 3;
        let p = plan(&cfg).unwrap();
        assert_eq!(p.len(), 8);
        assert!(p.iter().all(|s| s.target().is_some()));
    }

    #[test]
    fn fnv_reference() {
        let mut h = Fnv64::default();
        h.bytes(b"a");
        assert_eq!(h.finish(), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn relaxation_cache_does_not_change_the_dataset() {
        use crate::model::{build_reservoir, LatticeShape};
        let spec = build_reservoir(LatticeShape::chain(2).unwrap(), 0.1, 0.5, 3).unwrap();
        let mut cfg = DatasetConfig::paper(Task::Classify);
        cfg.train_per_class = 2;
        cfg.test_per_class = 1;
        cfg.samples_per_state = 300;
        cfg.schedule = Schedule { t_relax: 2.0, t_final: 2.0, dt: 0.05, record_stride: 1 };
        cfg.seed = 8;
        assert!(shared_relaxation_seed(&spec, &cfg).unwrap().is_some());
        let cached = generate_dataset(&spec, &cfg).unwrap();
        let direct: Vec<FeatureRecord> =
            plan(&cfg).unwrap().iter().map(|p| simulate_record(&spec, p, &cfg).unwrap()).collect();
        assert_eq!(cached.records, direct);
    }
}
