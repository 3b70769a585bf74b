// SPDX-License-Identifier: Apache-2.0

//! Positive-P trajectories of the cascade-driven Kerr lattice.
//!
//! Each mode carries a pair `(alpha_j, alpha_tilde_j)` and the source a pair
//! `(s, s_tilde)`. The right-hand side is split into a part `E` that
//! multiplies the variable and is integrated exponentially and a remainder
//! `R`:
//!
//! ```text
//! E(alpha_j) = i D_j - i U alpha_j alpha~_j^* - g_j/2 + sqrt(-iU) xi_j + iU/2
//! R(alpha_j) = -i F_j + i sum_k J_kj alpha_k - sqrt(g_s g_j f) W_j s
//! E(s)       = -f eta g_s / 2
//! ```
//!
//! with the tilde branch mirrored (`alpha <-> alpha~`, `xi -> xi~`, `s -> s~`).
//! The `iU/2` term is the correction that makes the midpoint evaluation of the
//! multiplicative Kerr noise consistent with the Ito equations.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

// Unused when std is linked (tests), which provides the inherent methods.
#[allow(unused_imports)]
use num_traits::Float;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::ReservoirSpec;
use crate::observables::OccupationSeries;
use crate::rng::{derive_seed, stream, Purpose};
use crate::sampler::PhaseSampleSet;
use crate::C64;

/// Trajectories per reduction chunk. Fixed so that any partition of the
/// chunks over workers reduces to the same bits.
pub const ENSEMBLE_CHUNK: usize = 256;

/// Below this `|E|` the bracket `(e^{tE} - 1)/E` is replaced by `t`.
const EXP_LIMIT: f64 = 1e-12;

/// Time grid of a run: relaxation with the source decoupled, then injection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub t_relax: f64,
    pub t_final: f64,
    pub dt: f64,
    /// Steps between recorded samples.
    pub record_stride: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { t_relax: 15.0, t_final: 25.0, dt: 0.05, record_stride: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleSteps {
    pub relax: usize,
    pub inject: usize,
}

impl ScheduleSteps {
    pub fn total(&self) -> usize {
        self.relax + self.inject
    }
}

fn whole_steps(t: f64, dt: f64, what: &str) -> Result<usize> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid(alloc::format!("{what} must be finite and >= 0")));
    }
    let k = (t / dt).round();
    if (k * dt - t).abs() > 1e-9 * t.max(1.0) {
        return Err(invalid(alloc::format!("{what} = {t} is not a multiple of dt = {dt}")));
    }
    Ok(k as usize)
}

impl Schedule {
    /// Step counts of both phases, validating the grid.
    pub fn steps(&self) -> Result<ScheduleSteps> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid("dt must be positive"));
        }
        if self.record_stride == 0 {
            return Err(invalid("record_stride must be >= 1"));
        }
        let relax = whole_steps(self.t_relax, self.dt, "t_relax")?;
        let inject = whole_steps(self.t_final, self.dt, "t_final")?;
        if relax % self.record_stride != 0 || inject % self.record_stride != 0 {
            return Err(invalid("record_stride must divide the step count of both phases"));
        }
        Ok(ScheduleSteps { relax, inject })
    }

    /// Recorded times, starting at 0.
    pub fn record_times(&self) -> Result<Vec<f64>> {
        let steps = self.steps()?;
        let h = self.dt * self.record_stride as f64;
        Ok((0..=steps.total() / self.record_stride).map(|k| k as f64 * h).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    /// Midpoint refinement passes per step (each evaluates the derivative once).
    pub iterations: usize,
    /// Divergence threshold on `|alpha_j|^2 + |alpha~_j|^2`.
    pub divergence_threshold: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { iterations: 3, divergence_threshold: 1e10 }
    }
}

/// One stochastic configuration of reservoir and source.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub alpha: Vec<C64>,
    pub alpha_tilde: Vec<C64>,
    pub s: C64,
    pub s_tilde: C64,
}

impl PhaseState {
    /// Empty reservoir with the given source pair.
    pub fn vacuum(n_modes: usize, s: C64, s_tilde: C64) -> Self {
        let z = C64::new(0.0, 0.0);
        PhaseState { alpha: vec![z; n_modes], alpha_tilde: vec![z; n_modes], s, s_tilde }
    }

    fn copy_from(&mut self, other: &PhaseState) {
        self.alpha.copy_from_slice(&other.alpha);
        self.alpha_tilde.copy_from_slice(&other.alpha_tilde);
        self.s = other.s;
        self.s_tilde = other.s_tilde;
    }
}

/// White-noise values for one step, already scaled by `1/sqrt(dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub xi: Vec<f64>,
    pub xi_tilde: Vec<f64>,
}

impl NoiseDraw {
    pub fn zeros(n_modes: usize) -> Self {
        NoiseDraw { xi: vec![0.0; n_modes], xi_tilde: vec![0.0; n_modes] }
    }

    /// Fresh draw: all `xi` first, then all `xi~`.
    pub fn fill<R: Rng + ?Sized>(&mut self, rng: &mut R, dt: f64) {
        let scale = 1.0 / dt.sqrt();
        for x in self.xi.iter_mut().chain(self.xi_tilde.iter_mut()) {
            let w: f64 = rng.sample(StandardNormal);
            *x = w * scale;
        }
    }
}

/// Exponential and remainder parts of the derivative. The source branches are
/// purely exponential.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDerivative {
    pub exp_alpha: Vec<C64>,
    pub rest_alpha: Vec<C64>,
    pub exp_alpha_tilde: Vec<C64>,
    pub rest_alpha_tilde: Vec<C64>,
    pub exp_s: C64,
    pub exp_s_tilde: C64,
}

impl SplitDerivative {
    fn zeros(n: usize) -> Self {
        let z = C64::new(0.0, 0.0);
        SplitDerivative {
            exp_alpha: vec![z; n],
            rest_alpha: vec![z; n],
            exp_alpha_tilde: vec![z; n],
            rest_alpha_tilde: vec![z; n],
            exp_s: z,
            exp_s_tilde: z,
        }
    }
}

/// Coefficients of the equations precomputed from a spec.
#[derive(Debug, Clone)]
pub struct Drift {
    n: usize,
    detuning: Vec<f64>,
    half_loss: Vec<f64>,
    drive: Vec<C64>,
    neighbours: Vec<Vec<(usize, f64)>>,
    kerr: f64,
    noise_coef: C64,
    cascade: Vec<f64>,
    source_rate: f64,
}

impl Drift {
    pub fn new(spec: &ReservoirSpec) -> Self {
        let u = spec.kerr;
        Drift {
            n: spec.n_modes,
            detuning: spec.detuning.clone(),
            half_loss: spec.loss.iter().map(|g| 0.5 * g).collect(),
            drive: spec.drive.clone(),
            neighbours: spec.neighbours(),
            kerr: u,
            noise_coef: kerr_noise_coefficient(u),
            cascade: spec
                .loss
                .iter()
                .zip(&spec.input_weights)
                .map(|(g, w)| (spec.source_loss * g).sqrt() * w)
                .collect(),
            source_rate: 0.5 * spec.eta * spec.source_loss,
        }
    }

    /// Evaluate the split derivative at `v` with coupling envelope `f`.
    pub fn eval(&self, v: &PhaseState, f: f64, noise: &NoiseDraw, out: &mut SplitDerivative) {
        let i1 = C64::new(0.0, 1.0);
        let sqrt_f = f.sqrt();
        let u = self.kerr;
        let common_im = 0.5 * u;
        for j in 0..self.n {
            let (a, at) = (v.alpha[j], v.alpha_tilde[j]);
            let base = C64::new(-self.half_loss[j], self.detuning[j] + common_im);
            out.exp_alpha[j] = base - i1 * u * a * at.conj() + self.noise_coef * noise.xi[j];
            out.exp_alpha_tilde[j] = base - i1 * u * at * a.conj() + self.noise_coef * noise.xi_tilde[j];
            let mut hop = C64::new(0.0, 0.0);
            let mut hop_t = C64::new(0.0, 0.0);
            for &(k, jk) in &self.neighbours[j] {
                hop += v.alpha[k] * jk;
                hop_t += v.alpha_tilde[k] * jk;
            }
            let drive = -i1 * self.drive[j];
            let feed = sqrt_f * self.cascade[j];
            out.rest_alpha[j] = drive + i1 * hop - v.s * feed;
            out.rest_alpha_tilde[j] = drive + i1 * hop_t - v.s_tilde * feed;
        }
        out.exp_s = C64::new(-f * self.source_rate, 0.0);
        out.exp_s_tilde = out.exp_s;
    }
}

/// `sqrt(-iU)` on the principal branch, `sqrt(U) e^{-i pi/4}`.
pub fn kerr_noise_coefficient(kerr: f64) -> C64 {
    C64::from_polar(kerr.sqrt(), -core::f64::consts::FRAC_PI_4)
}

/// Split derivative of `state` (allocating convenience wrapper).
pub fn deriv_split(state: &PhaseState, spec: &ReservoirSpec, f: f64, noise: &NoiseDraw) -> SplitDerivative {
    let drift = Drift::new(spec);
    let mut out = SplitDerivative::zeros(spec.n_modes);
    drift.eval(state, f, noise, &mut out);
    out
}

/// `v0 e^{hE} + (e^{hE} - 1) R / E`, with the bracket's `E -> 0` limit `h`.
#[inline]
pub fn exp_update(v0: C64, e: C64, r: C64, h: f64) -> C64 {
    let z = e * h;
    let growth = z.exp();
    let bracket = if e.norm() < EXP_LIMIT {
        C64::new(h, 0.0)
    } else if z.norm() < 1e-5 {
        (C64::new(1.0, 0.0) + z * (0.5 + z * (1.0 / 6.0 + z / 24.0))) * h
    } else {
        (growth - 1.0) / e
    };
    v0 * growth + bracket * r
}

fn apply_update(v0: &PhaseState, d: &SplitDerivative, h: f64, out: &mut PhaseState) {
    for j in 0..v0.alpha.len() {
        out.alpha[j] = exp_update(v0.alpha[j], d.exp_alpha[j], d.rest_alpha[j], h);
        out.alpha_tilde[j] = exp_update(v0.alpha_tilde[j], d.exp_alpha_tilde[j], d.rest_alpha_tilde[j], h);
    }
    let zero = C64::new(0.0, 0.0);
    out.s = exp_update(v0.s, d.exp_s, zero, h);
    out.s_tilde = exp_update(v0.s_tilde, d.exp_s_tilde, zero, h);
}

/// Reusable buffers for stepping one trajectory.
pub struct Stepper {
    drift: Drift,
    mid: PhaseState,
    next: PhaseState,
    deriv: SplitDerivative,
}

impl Stepper {
    pub fn new(spec: &ReservoirSpec) -> Self {
        let n = spec.n_modes;
        let z = C64::new(0.0, 0.0);
        Stepper {
            drift: Drift::new(spec),
            mid: PhaseState::vacuum(n, z, z),
            next: PhaseState::vacuum(n, z, z),
            deriv: SplitDerivative::zeros(n),
        }
    }

    /// Advance `state` by one step of length `dt` in place. The derivative is
    /// evaluated at a midpoint estimate refined `iterations` times with the
    /// noise held fixed; the last evaluation drives the full step.
    pub fn step(&mut self, state: &mut PhaseState, dt: f64, f: f64, noise: &NoiseDraw, iterations: usize) {
        let iterations = iterations.max(1);
        self.mid.copy_from(state);
        for it in 0..iterations {
            self.drift.eval(&self.mid, f, noise, &mut self.deriv);
            if it + 1 < iterations {
                apply_update(state, &self.deriv, 0.5 * dt, &mut self.next);
                core::mem::swap(&mut self.mid, &mut self.next);
            }
        }
        apply_update(state, &self.deriv, dt, &mut self.next);
        state.copy_from(&self.next);
    }
}

/// One semi-implicit step (allocating convenience wrapper).
pub fn step_semi_implicit(
    state: &PhaseState,
    spec: &ReservoirSpec,
    dt: f64,
    f: f64,
    noise: &NoiseDraw,
    iterations: usize,
) -> Result<PhaseState> {
    if !(dt > 0.0) {
        return Err(invalid("dt must be positive"));
    }
    if iterations == 0 {
        return Err(invalid("iterations must be >= 1"));
    }
    let mut out = state.clone();
    Stepper::new(spec).step(&mut out, dt, f, noise, iterations);
    Ok(out)
}

/// True if any mode exceeds `threshold` in `|alpha|^2 + |alpha~|^2` or any
/// component is not finite.
pub fn detect_divergence(state: &PhaseState, threshold: f64) -> bool {
    let finite = |c: &C64| c.re.is_finite() && c.im.is_finite();
    if !finite(&state.s) || !finite(&state.s_tilde) {
        return true;
    }
    state
        .alpha
        .iter()
        .zip(&state.alpha_tilde)
        .any(|(a, at)| !finite(a) || !finite(at) || !(a.norm_sqr() + at.norm_sqr() <= threshold))
}

/// Run one trajectory through both phases, calling `observe(record_index, state)`
/// at every recorded time. Returns the step at which it diverged, if it did.
pub fn integrate_with<R: Rng + ?Sized, O: FnMut(usize, &PhaseState)>(
    initial: &PhaseState,
    stepper: &mut Stepper,
    steps: ScheduleSteps,
    schedule: &Schedule,
    config: &IntegratorConfig,
    rng: &mut R,
    mut observe: O,
) -> Option<usize> {
    let mut state = initial.clone();
    if detect_divergence(&state, config.divergence_threshold) {
        return Some(0);
    }
    observe(0, &state);
    advance(&mut state, stepper, 0..steps.total(), steps, schedule, config, rng, observe)
}

/// Take steps `k = range.start + 1 ..= range.end`.
#[allow(clippy::too_many_arguments)]
fn advance<R: Rng + ?Sized, O: FnMut(usize, &PhaseState)>(
    state: &mut PhaseState,
    stepper: &mut Stepper,
    range: Range<usize>,
    steps: ScheduleSteps,
    schedule: &Schedule,
    config: &IntegratorConfig,
    rng: &mut R,
    mut observe: O,
) -> Option<usize> {
    let mut noise = NoiseDraw::zeros(state.alpha.len());
    for k in range.start + 1..=range.end {
        let f = if k > steps.relax { 1.0 } else { 0.0 };
        noise.fill(rng, schedule.dt);
        stepper.step(state, schedule.dt, f, &noise, config.iterations);
        if detect_divergence(state, config.divergence_threshold) {
            return Some(k);
        }
        if k % schedule.record_stride == 0 {
            observe(k / schedule.record_stride, state);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Recorded times (possibly cut short by divergence).
    pub times: Vec<f64>,
    pub states: Vec<PhaseState>,
    /// Time of the step that diverged.
    pub diverged_at: Option<f64>,
}

/// Evolve a single trajectory, recording the full state.
///
/// The noise stream is `(seed, index)`; `run_ensemble` uses the same streams,
/// so trajectory `i` here reproduces trajectory `i` of an ensemble.
pub fn evolve_trajectory(
    initial: &PhaseState,
    spec: &ReservoirSpec,
    schedule: &Schedule,
    config: &IntegratorConfig,
    seed: u64,
    index: u64,
) -> Result<Trajectory> {
    if initial.alpha.len() != spec.n_modes || initial.alpha_tilde.len() != spec.n_modes {
        return Err(invalid("initial state does not match the reservoir size"));
    }
    let steps = schedule.steps()?;
    let h = schedule.dt * schedule.record_stride as f64;
    let mut stepper = Stepper::new(spec);
    let mut rng = stream(seed, Purpose::Trajectory, index);
    let mut times = Vec::new();
    let mut states = Vec::new();
    let diverged = integrate_with(initial, &mut stepper, steps, schedule, config, &mut rng, |k, s| {
        times.push(k as f64 * h);
        states.push(s.clone());
    });
    Ok(Trajectory { times, states, diverged_at: diverged.map(|k| k as f64 * schedule.dt) })
}

/// Running mean and second moment (Welford / Chan) per `(record, mode)`,
/// for both the real and imaginary parts of `alpha alpha~^*`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleAccumulator {
    records: usize,
    modes: usize,
    count: u64,
    diverged: u64,
    mean_re: Vec<f64>,
    m2_re: Vec<f64>,
    mean_im: Vec<f64>,
    m2_im: Vec<f64>,
}

impl EnsembleAccumulator {
    pub fn new(records: usize, modes: usize) -> Self {
        let z = vec![0.0; records * modes];
        EnsembleAccumulator {
            records,
            modes,
            count: 0,
            diverged: 0,
            mean_re: z.clone(),
            m2_re: z.clone(),
            mean_im: z.clone(),
            m2_im: z,
        }
    }

    /// Add one convergent trajectory (`records * modes` values, record-major).
    pub fn push(&mut self, re: &[f64], im: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for (k, (&x, &y)) in re.iter().zip(im).enumerate() {
            let d = x - self.mean_re[k];
            self.mean_re[k] += d / n;
            self.m2_re[k] += d * (x - self.mean_re[k]);
            let d = y - self.mean_im[k];
            self.mean_im[k] += d / n;
            self.m2_im[k] += d * (y - self.mean_im[k]);
        }
    }

    pub fn push_diverged(&mut self) {
        self.diverged += 1;
    }

    /// Fold `other` in after `self`.
    pub fn merge(&mut self, other: &EnsembleAccumulator) {
        self.diverged += other.diverged;
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            let diverged = self.diverged;
            *self = other.clone();
            self.diverged = diverged;
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for k in 0..self.mean_re.len() {
            let d = other.mean_re[k] - self.mean_re[k];
            self.mean_re[k] += d * nb / n;
            self.m2_re[k] += other.m2_re[k] + d * d * na * nb / n;
            let d = other.mean_im[k] - self.mean_im[k];
            self.mean_im[k] += d * nb / n;
            self.m2_im[k] += other.m2_im[k] + d * d * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn convergent(&self) -> u64 {
        self.count
    }

    pub fn diverged(&self) -> u64 {
        self.diverged
    }

    fn se(&self, m2: f64) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        let n = self.count as f64;
        (m2 / (n - 1.0) / n).sqrt()
    }

    pub fn finish(self, times: Vec<f64>, injection_start: f64) -> Result<EnsembleResult> {
        let total = (self.count + self.diverged) as usize;
        if self.count == 0 {
            return Err(Error::EnsembleFailure(total));
        }
        let m = self.modes;
        let rows = |v: &[f64], f: &dyn Fn(f64) -> f64| -> Vec<Vec<f64>> {
            (0..self.records).map(|r| v[r * m..(r + 1) * m].iter().map(|&x| f(x)).collect()).collect()
        };
        let id = |x: f64| x;
        let divergence_fraction = self.diverged as f64 / total as f64;
        let series = OccupationSeries {
            times,
            injection_start,
            mean_n: rows(&self.mean_re, &id),
            se_n: rows(&self.m2_re, &|x| self.se(x)),
            divergence_fraction,
        };
        Ok(EnsembleResult {
            imag_mean: rows(&self.mean_im, &id),
            imag_se: rows(&self.m2_im, &|x| self.se(x)),
            series,
            trajectories: total,
            diverged: self.diverged as usize,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    /// Mean and standard error of `Re <alpha_j alpha~_j^*>`.
    pub series: OccupationSeries,
    /// Mean of `Im <alpha_j alpha~_j^*>`, which should vanish within noise.
    pub imag_mean: Vec<Vec<f64>>,
    pub imag_se: Vec<Vec<f64>>,
    pub trajectories: usize,
    pub diverged: usize,
}

/// Fixed reduction chunks covering `0..n`.
pub fn chunk_ranges(n: usize) -> Vec<Range<usize>> {
    (0..n.div_ceil(ENSEMBLE_CHUNK)).map(|c| c * ENSEMBLE_CHUNK..((c + 1) * ENSEMBLE_CHUNK).min(n)).collect()
}

/// Simulate trajectories `range` of an ensemble into a fresh accumulator.
///
/// Trajectory `i` starts from an empty reservoir with source pair `i` and
/// uses noise stream `(seed, i)`.
pub fn ensemble_chunk(
    spec: &ReservoirSpec,
    sources: &PhaseSampleSet,
    schedule: &Schedule,
    config: &IntegratorConfig,
    seed: u64,
    range: Range<usize>,
) -> Result<EnsembleAccumulator> {
    let steps = schedule.steps()?;
    if range.end > sources.len() {
        return Err(invalid("trajectory range exceeds the number of source samples"));
    }
    let records = steps.total() / schedule.record_stride + 1;
    let modes = spec.n_modes;
    let mut acc = EnsembleAccumulator::new(records, modes);
    let mut stepper = Stepper::new(spec);
    let mut re = vec![0.0; records * modes];
    let mut im = vec![0.0; records * modes];
    for i in range {
        let p = sources.pairs[i];
        let init = PhaseState::vacuum(modes, p.alpha, p.alpha_tilde);
        let mut rng = stream(seed, Purpose::Trajectory, i as u64);
        let diverged = integrate_with(&init, &mut stepper, steps, schedule, config, &mut rng, |k, s| {
            for j in 0..modes {
                let n = s.alpha[j] * s.alpha_tilde[j].conj();
                re[k * modes + j] = n.re;
                im[k * modes + j] = n.im;
            }
        });
        if diverged.is_some() {
            acc.push_diverged();
        } else {
            acc.push(&re, &im);
        }
    }
    Ok(acc)
}

/// Ensemble-averaged occupations, reduced chunk by chunk in index order.
pub fn run_ensemble(
    spec: &ReservoirSpec,
    sources: &PhaseSampleSet,
    schedule: &Schedule,
    config: &IntegratorConfig,
    seed: u64,
) -> Result<EnsembleResult> {
    if sources.is_empty() {
        return Err(invalid("source sample set is empty"));
    }
    let times = schedule.record_times()?;
    let mut total = EnsembleAccumulator::new(times.len(), spec.n_modes);
    for range in chunk_ranges(sources.len()) {
        total.merge(&ensemble_chunk(spec, sources, schedule, config, seed, range)?);
    }
    total.finish(times, schedule.t_relax)
}

/// Cached relaxation phase of one trajectory.
#[derive(Debug, Clone)]
struct RelaxedTrajectory {
    alpha: Vec<C64>,
    alpha_tilde: Vec<C64>,
    rng: ChaCha8Rng,
    /// `Re` and `Im` of `alpha alpha~^*` for the relaxation records, record-major.
    re: Vec<f64>,
    im: Vec<f64>,
}

/// Relaxation phase of an ensemble, shared by every source state.
///
/// While the source is decoupled it enters the reservoir equations only
/// multiplied by zero, so the relaxation phase of trajectory `i` depends on
/// its noise stream alone. Ensembles driven by the same noise seed can resume
/// from this cache instead of recomputing it; the results are identical.
#[derive(Debug, Clone)]
pub struct RelaxedEnsemble {
    seed: u64,
    n_modes: usize,
    schedule: Schedule,
    config: IntegratorConfig,
    /// `None` for trajectories that diverged before injection.
    trajectories: Vec<Option<RelaxedTrajectory>>,
}

impl RelaxedEnsemble {
    /// Memory needed to cache `count` trajectories.
    pub fn estimate_bytes(n_modes: usize, schedule: &Schedule, count: usize) -> Result<usize> {
        let steps = schedule.steps()?;
        let records = steps.relax / schedule.record_stride + 1;
        Ok(count * (records * n_modes * 16 + n_modes * 32 + 512))
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Join chunks produced by [`relax_chunk`] over consecutive ranges from 0.
    pub fn from_chunks(
        spec: &ReservoirSpec,
        schedule: &Schedule,
        config: &IntegratorConfig,
        seed: u64,
        chunks: Vec<RelaxedChunk>,
    ) -> Result<Self> {
        let mut trajectories = Vec::new();
        for c in chunks {
            if c.start != trajectories.len() || c.seed != seed {
                return Err(invalid("relaxed chunks must be consecutive and share the seed"));
            }
            trajectories.extend(c.trajectories);
        }
        Ok(RelaxedEnsemble { seed, n_modes: spec.n_modes, schedule: *schedule, config: *config, trajectories })
    }
}

/// Relaxation phase of trajectories `start..start + len`.
#[derive(Debug, Clone)]
pub struct RelaxedChunk {
    seed: u64,
    start: usize,
    trajectories: Vec<Option<RelaxedTrajectory>>,
}

/// Relax trajectories `range` from vacuum with noise streams `(seed, i)`.
pub fn relax_chunk(
    spec: &ReservoirSpec,
    schedule: &Schedule,
    config: &IntegratorConfig,
    seed: u64,
    range: Range<usize>,
) -> Result<RelaxedChunk> {
    let steps = schedule.steps()?;
    let modes = spec.n_modes;
    let records = steps.relax / schedule.record_stride + 1;
    let mut stepper = Stepper::new(spec);
    let z = C64::new(0.0, 0.0);
    let start = range.start;
    let mut trajectories = Vec::with_capacity(range.len());
    for i in range {
        let mut rng = stream(seed, Purpose::Trajectory, i as u64);
        let mut state = PhaseState::vacuum(modes, z, z);
        let mut re = vec![0.0; records * modes];
        let mut im = vec![0.0; records * modes];
        let mut record = |k: usize, s: &PhaseState| {
            for j in 0..modes {
                let n = s.alpha[j] * s.alpha_tilde[j].conj();
                re[k * modes + j] = n.re;
                im[k * modes + j] = n.im;
            }
        };
        record(0, &state);
        let diverged = advance(&mut state, &mut stepper, 0..steps.relax, steps, schedule, config, &mut rng, record);
        trajectories.push(diverged.is_none().then_some(RelaxedTrajectory {
            alpha: state.alpha,
            alpha_tilde: state.alpha_tilde,
            rng,
            re,
            im,
        }));
    }
    Ok(RelaxedChunk { seed, start, trajectories })
}

/// Relax a whole ensemble of `count` trajectories.
pub fn relax_ensemble(
    spec: &ReservoirSpec,
    schedule: &Schedule,
    config: &IntegratorConfig,
    seed: u64,
    count: usize,
) -> Result<RelaxedEnsemble> {
    let chunks = chunk_ranges(count)
        .into_iter()
        .map(|r| relax_chunk(spec, schedule, config, seed, r))
        .collect::<Result<Vec<_>>>()?;
    RelaxedEnsemble::from_chunks(spec, schedule, config, seed, chunks)
}

/// [`ensemble_chunk`] resumed from a cached relaxation phase.
pub fn ensemble_chunk_relaxed(
    spec: &ReservoirSpec,
    relaxed: &RelaxedEnsemble,
    sources: &PhaseSampleSet,
    range: Range<usize>,
) -> Result<EnsembleAccumulator> {
    if relaxed.n_modes != spec.n_modes {
        return Err(invalid("relaxed ensemble does not match the reservoir size"));
    }
    if range.end > sources.len() || range.end > relaxed.len() {
        return Err(invalid("trajectory range exceeds the cached or sampled trajectories"));
    }
    let (schedule, config) = (&relaxed.schedule, &relaxed.config);
    let steps = schedule.steps()?;
    let records = steps.total() / schedule.record_stride + 1;
    let relax_len = (steps.relax / schedule.record_stride + 1) * spec.n_modes;
    let modes = spec.n_modes;
    let mut acc = EnsembleAccumulator::new(records, modes);
    let mut stepper = Stepper::new(spec);
    let mut re = vec![0.0; records * modes];
    let mut im = vec![0.0; records * modes];
    // A decoupled step leaves the source unchanged up to the sign of zero
    // components; one such update reproduces that exactly.
    let frozen_rate = C64::new(-0.0 * 0.5 * spec.eta * spec.source_loss, 0.0);
    let zero = C64::new(0.0, 0.0);
    let freeze = |v: C64| if steps.relax > 0 { exp_update(v, frozen_rate, zero, schedule.dt) } else { v };
    for i in range {
        let Some(cached) = &relaxed.trajectories[i] else {
            acc.push_diverged();
            continue;
        };
        let p = sources.pairs[i];
        if detect_divergence(&PhaseState::vacuum(0, p.alpha, p.alpha_tilde), config.divergence_threshold) {
            acc.push_diverged();
            continue;
        }
        let mut state = PhaseState {
            alpha: cached.alpha.clone(),
            alpha_tilde: cached.alpha_tilde.clone(),
            s: freeze(p.alpha),
            s_tilde: freeze(p.alpha_tilde),
        };
        let mut rng = cached.rng.clone();
        re[..relax_len].copy_from_slice(&cached.re);
        im[..relax_len].copy_from_slice(&cached.im);
        let diverged =
            advance(&mut state, &mut stepper, steps.relax..steps.total(), steps, schedule, config, &mut rng, |k, s| {
                for j in 0..modes {
                    let n = s.alpha[j] * s.alpha_tilde[j].conj();
                    re[k * modes + j] = n.re;
                    im[k * modes + j] = n.im;
                }
            });
        if diverged.is_some() {
            acc.push_diverged();
        } else {
            acc.push(&re, &im);
        }
    }
    Ok(acc)
}

/// [`run_ensemble`] resumed from a cached relaxation phase, whose noise seed
/// takes the place of the `seed` argument.
pub fn run_ensemble_relaxed(
    spec: &ReservoirSpec,
    relaxed: &RelaxedEnsemble,
    sources: &PhaseSampleSet,
) -> Result<EnsembleResult> {
    if sources.is_empty() {
        return Err(invalid("source sample set is empty"));
    }
    let times = relaxed.schedule.record_times()?;
    let mut total = EnsembleAccumulator::new(times.len(), spec.n_modes);
    for range in chunk_ranges(sources.len()) {
        total.merge(&ensemble_chunk_relaxed(spec, relaxed, sources, range)?);
    }
    total.finish(times, relaxed.schedule.t_relax)
}

/// Parameters of one single-mode stability point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityPoint {
    pub drive: f64,
    pub kerr: f64,
    pub loss: f64,
    pub detuning: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityResult {
    pub point: StabilityPoint,
    pub trajectories: usize,
    pub convergent: usize,
    pub fraction: f64,
}

/// Cartesian `(F, U)` grid at fixed loss and detuning, `F` varying fastest.
pub fn grid_drive_kerr(drives: &[f64], kerrs: &[f64], loss: f64, detuning: f64) -> Vec<StabilityPoint> {
    kerrs
        .iter()
        .flat_map(|&kerr| drives.iter().map(move |&drive| StabilityPoint { drive, kerr, loss, detuning }))
        .collect()
}

/// Cartesian `(F, gamma)` grid at fixed Kerr and detuning, `F` varying fastest.
pub fn grid_drive_loss(drives: &[f64], losses: &[f64], kerr: f64, detuning: f64) -> Vec<StabilityPoint> {
    losses
        .iter()
        .flat_map(|&loss| drives.iter().map(move |&drive| StabilityPoint { drive, kerr, loss, detuning }))
        .collect()
}

/// Fraction of convergent vacuum-started trajectories of a lone driven mode.
pub fn stability_point(
    point: StabilityPoint,
    index: u64,
    trajectories: usize,
    schedule: &Schedule,
    config: &IntegratorConfig,
    seed: u64,
) -> Result<StabilityResult> {
    if trajectories == 0 {
        return Err(invalid("need at least one trajectory per point"));
    }
    if !(point.loss > 0.0) || !(point.kerr >= 0.0) {
        return Err(invalid("stability point needs loss > 0 and kerr >= 0"));
    }
    let spec = ReservoirSpec::single_mode(point.detuning, point.kerr, point.drive, point.loss);
    let steps = schedule.steps()?;
    let mut stepper = Stepper::new(&spec);
    let z = C64::new(0.0, 0.0);
    let init = PhaseState::vacuum(1, z, z);
    let point_seed = derive_seed(seed, index);
    let mut convergent = 0;
    for t in 0..trajectories {
        let mut rng = stream(point_seed, Purpose::Stability, t as u64);
        if integrate_with(&init, &mut stepper, steps, schedule, config, &mut rng, |_, _| {}).is_none() {
            convergent += 1;
        }
    }
    Ok(StabilityResult { point, trajectories, convergent, fraction: convergent as f64 / trajectories as f64 })
}

/// Stability fractions for every point, in order.
pub fn stability_scan(
    points: &[StabilityPoint],
    trajectories: usize,
    schedule: &Schedule,
    config: &IntegratorConfig,
    seed: u64,
) -> Result<Vec<StabilityResult>> {
    points
        .iter()
        .enumerate()
        .map(|(i, &p)| stability_point(p, i as u64, trajectories, schedule, config, seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_linear(drive: f64) -> ReservoirSpec {
        ReservoirSpec::single_mode(0.0, 0.0, drive, 1.0)
    }

    #[test]
    fn bare_decay_derivative() {
        let spec = spec_linear(0.0);
        let z = C64::new(0.0, 0.0);
        let st =
            PhaseState { alpha: vec![C64::new(0.3, 0.1)], alpha_tilde: vec![C64::new(0.2, 0.0)], s: z, s_tilde: z };
        let d = deriv_split(&st, &spec, 0.0, &NoiseDraw::zeros(1));
        assert_eq!(d.exp_alpha[0], C64::new(-0.5, 0.0));
        assert_eq!(d.rest_alpha[0], z);
        assert_eq!(d.exp_s, z);
    }

    #[test]
    fn kerr_derivative_by_substitution() {
        let spec = ReservoirSpec::single_mode(0.0, 0.1, 0.0, 1.0);
        let one = C64::new(1.0, 0.0);
        let st = PhaseState { alpha: vec![one], alpha_tilde: vec![one], s: one, s_tilde: one };
        let noise = NoiseDraw { xi: vec![0.7], xi_tilde: vec![-0.2] };
        let d = deriv_split(&st, &spec, 0.0, &noise);
        let c = kerr_noise_coefficient(0.1);
        assert!((c.norm() - 0.1f64.sqrt()).abs() < 1e-15);
        assert!((c * c - C64::new(0.0, -0.1)).norm() < 1e-15);
        let want = C64::new(-0.5, -0.1 + 0.05) + c * 0.7;
        assert!((d.exp_alpha[0] - want).norm() < 1e-15);
        let want_t = C64::new(-0.5, -0.1 + 0.05) + c * -0.2;
        assert!((d.exp_alpha_tilde[0] - want_t).norm() < 1e-15);
    }

    #[test]
    fn pure_decay_is_exact() {
        let spec = spec_linear(0.0);
        let z = C64::new(0.0, 0.0);
        let a0 = C64::new(1.3, -0.4);
        let st = PhaseState { alpha: vec![a0], alpha_tilde: vec![a0], s: z, s_tilde: z };
        let out = step_semi_implicit(&st, &spec, 0.05, 0.0, &NoiseDraw::zeros(1), 3).unwrap();
        assert!((out.alpha[0] - a0 * (-0.025f64).exp()).norm() < 1e-15);
    }

    #[test]
    fn exp_update_limit() {
        let v = exp_update(C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(2.0, 1.0), 0.1);
        assert_eq!(v, C64::new(1.2, 0.1));
        let tiny = exp_update(C64::new(1.0, 0.0), C64::new(1e-9, 0.0), C64::new(2.0, 0.0), 0.1);
        assert!((tiny - C64::new(1.2, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn divergence_detection() {
        let z = C64::new(0.0, 0.0);
        let mut st = PhaseState::vacuum(2, z, z);
        assert!(!detect_divergence(&st, 10.0));
        st.alpha[1] = C64::new(f64::NAN, 0.0);
        assert!(detect_divergence(&st, 10.0));
        st.alpha[1] = C64::new(20.0f64.sqrt(), 0.0);
        assert!(detect_divergence(&st, 10.0));
        let mut st = PhaseState::vacuum(1, C64::new(f64::INFINITY, 0.0), z);
        assert!(detect_divergence(&st, 10.0));
        st.s = z;
        assert!(!detect_divergence(&st, 10.0));
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::default().steps().is_ok());
        assert_eq!(Schedule::default().steps().unwrap(), ScheduleSteps { relax: 300, inject: 500 });
        let bad = Schedule { dt: 0.0, ..Schedule::default() };
        assert!(bad.steps().is_err());
        let bad = Schedule { record_stride: 7, ..Schedule::default() };
        assert!(bad.steps().is_err());
        let bad = Schedule { t_relax: 0.123, ..Schedule::default() };
        assert!(bad.steps().is_err());
        let s = Schedule { t_relax: 1.0, t_final: 1.0, dt: 0.1, record_stride: 5 };
        assert_eq!(s.record_times().unwrap().len(), 5);
    }

    #[test]
    fn accumulator_merge_matches_sequential() {
        let data: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let mut seq = EnsembleAccumulator::new(1, 1);
        for x in &data {
            seq.push(&[*x], &[0.0]);
        }
        let mut a = EnsembleAccumulator::new(1, 1);
        let mut b = EnsembleAccumulator::new(1, 1);
        for x in &data[..13] {
            a.push(&[*x], &[0.0]);
        }
        for x in &data[13..] {
            b.push(&[*x], &[0.0]);
        }
        a.merge(&b);
        let mean: f64 = data.iter().sum::<f64>() / 40.0;
        let var: f64 = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 39.0;
        let r = a.finish(vec![0.0], 0.0).unwrap();
        assert!((r.series.mean_n[0][0] - mean).abs() < 1e-13);
        assert!((r.series.se_n[0][0] - (var / 40.0).sqrt()).abs() < 1e-13);
        let s = seq.finish(vec![0.0], 0.0).unwrap();
        assert!((s.series.mean_n[0][0] - mean).abs() < 1e-13);
    }

    #[test]
    fn all_diverged_is_an_error() {
        let mut acc = EnsembleAccumulator::new(1, 1);
        acc.push_diverged();
        acc.push_diverged();
        assert_eq!(acc.finish(vec![0.0], 0.0).unwrap_err(), Error::EnsembleFailure(2));
    }

    #[test]
    fn relaxed_cache_is_bit_identical() {
        use crate::model::{build_reservoir, LatticeShape};
        use crate::sampler::{sample_cat, sample_squeezed_vacuum, GridSpec};
        let spec = build_reservoir(LatticeShape::chain(2).unwrap(), 0.4, 1.5, 11).unwrap();
        let schedule = Schedule { t_relax: 2.0, t_final: 1.0, dt: 0.05, record_stride: 2 };
        let config = IntegratorConfig { divergence_threshold: 40.0, ..IntegratorConfig::default() };
        let beta = C64::new(1.0, -0.3);
        let sources = [
            sample_squeezed_vacuum(0.8, 0.4, 300, 5).unwrap(),
            sample_cat(beta, 0.0, 300, &GridSpec::for_cat(beta), 6).unwrap(),
            sample_coherent_zero(300),
        ];
        let relaxed = relax_ensemble(&spec, &schedule, &config, 99, 300).unwrap();
        let mut some_diverged = false;
        for src in &sources {
            let direct = run_ensemble(&spec, src, &schedule, &config, 99).unwrap();
            let cached = run_ensemble_relaxed(&spec, &relaxed, src).unwrap();
            some_diverged |= direct.diverged > 0;
            assert_eq!(direct, cached);
        }
        assert!(some_diverged);
    }

    fn sample_coherent_zero(n: usize) -> PhaseSampleSet {
        crate::sampler::sample_coherent(C64::new(0.0, -0.0), n).unwrap()
    }
}
