// SPDX-License-Identifier: Apache-2.0

//! Fixed-step RK4 integration of the cascade master equation.
//!
//! The generator is applied in jump form,
//! `d rho = -i H_eff rho + i rho H_eff^dag + sum_j C_j rho C_j^dag`, with
//! `C_j = sqrt(gamma_s) W_j s + sqrt(gamma_j) b_j` while the source is coupled
//! and `C_j = sqrt(gamma_j) b_j` otherwise. Expanding the jump terms gives back
//! the per-mode loss, the `eta`-scaled source loss and the one-way cross terms
//! `sqrt(gamma_s gamma_j) W_j ([s rho, b_j^dag] + [b_j, rho s^dag])`; what is left
//! over ends up in `H_eff = H - i/2 sum_j C_j^dag C_j` plus a Hermitian
//! correction, which combine to `H_eff = H - i/2 (gamma_s eta n_s + sum_j gamma_j n_j)
//! - i sum_j sqrt(gamma_s gamma_j) W_j b_j^dag s`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

// Unused when std is linked (tests), which provides the inherent methods.
#[allow(unused_imports)]
use num_traits::Float;

use super::{expect_occupation, FockDensityMatrix};
use crate::dynamics::Schedule;
use crate::error::{invalid, Error, Result};
use crate::model::ReservoirSpec;
use crate::observables::OccupationSeries;
use crate::C64;

/// Largest composite dimension the oracle accepts.
pub const MAX_ORACLE_DIM: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MasterConfig {
    /// RK4 step.
    pub dt: f64,
    /// Abort once `|Tr rho - 1|` exceeds this.
    pub trace_tolerance: f64,
}

impl Default for MasterConfig {
    fn default() -> Self {
        Self { dt: 0.005, trace_tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct MasterRun {
    /// Reservoir occupations on the schedule's record grid (standard errors are zero).
    pub series: OccupationSeries,
    /// Source occupation on the same grid (zero when no source is attached).
    pub source_occupation: Vec<f64>,
    pub max_trace_drift: f64,
    pub max_hermiticity_error: f64,
    /// Largest population found in the top Fock level of any subsystem.
    pub max_top_level_population: f64,
    pub final_state: FockDensityMatrix,
}

/// Compressed sparse rows.
#[derive(Debug, Clone, Default)]
struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl Csr {
    /// Build from `(row, col, value)` triplets, summing duplicates.
    fn from_triplets(n: usize, mut t: Vec<(usize, usize, C64)>) -> Self {
        t.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<C64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            cols.push(c);
            vals.push(v);
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Csr { row_ptr, cols, vals }
    }

    fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }
}

/// Basis bookkeeping for a product of truncated modes.
struct Basis {
    dims: Vec<usize>,
    strides: Vec<usize>,
    occ: Vec<Vec<usize>>,
    total: usize,
}

impl Basis {
    fn new(dims: &[usize]) -> Self {
        let total: usize = dims.iter().product();
        let strides: Vec<usize> = (0..dims.len()).map(|k| dims[k + 1..].iter().product()).collect();
        let occ = (0..dims.len()).map(|k| FockDensityMatrix::occupation_table(dims, k)).collect();
        Basis { dims: dims.to_vec(), strides, occ, total }
    }

    /// `b_k |i>` as `(target, amplitude)`.
    fn lower(&self, k: usize, i: usize) -> Option<(usize, f64)> {
        let n = self.occ[k][i];
        (n > 0).then(|| (i - self.strides[k], (n as f64).sqrt()))
    }

    /// `b_k^dag |i>`.
    fn raise(&self, k: usize, i: usize) -> Option<(usize, f64)> {
        let n = self.occ[k][i];
        (n + 1 < self.dims[k]).then(|| (i + self.strides[k], ((n + 1) as f64).sqrt()))
    }
}

struct Generator {
    n: usize,
    heff: Csr,
    jumps: Vec<Csr>,
}

impl Generator {
    /// `coupled`: whether the source (last subsystem) is attached with f = 1.
    fn new(spec: &ReservoirSpec, basis: &Basis, coupled: bool) -> Self {
        let modes = spec.n_modes;
        let n = basis.total;
        let i1 = C64::new(0.0, 1.0);
        let mut h: Vec<(usize, usize, C64)> = Vec::new();
        for col in 0..n {
            let mut diag = C64::new(0.0, 0.0);
            for j in 0..modes {
                let nj = basis.occ[j][col] as f64;
                diag += -spec.detuning[j] * nj + 0.5 * spec.kerr * nj * (nj - 1.0);
                diag -= 0.5 * i1 * spec.loss[j] * nj;
                let f = spec.drive[j];
                if let Some((row, a)) = basis.raise(j, col) {
                    h.push((row, col, f * a));
                }
                if let Some((row, a)) = basis.lower(j, col) {
                    h.push((row, col, f.conj() * a));
                }
            }
            for &(a, b) in &spec.edges {
                let jab = spec.hopping[a][b];
                if jab == 0.0 {
                    continue;
                }
                for (lo, hi) in [(b, a), (a, b)] {
                    // -J b_hi^dag b_lo
                    if let Some((mid, x)) = basis.lower(lo, col) {
                        if let Some((row, y)) = basis.raise(hi, mid) {
                            h.push((row, col, C64::new(-jab * x * y, 0.0)));
                        }
                    }
                }
            }
            if coupled {
                let s = modes;
                let ns = basis.occ[s][col] as f64;
                diag -= 0.5 * i1 * spec.source_loss * spec.eta * ns;
                if let Some((mid, x)) = basis.lower(s, col) {
                    for j in 0..modes {
                        let kappa = (spec.source_loss * spec.loss[j]).sqrt() * spec.input_weights[j];
                        if let Some((row, y)) = basis.raise(j, mid) {
                            h.push((row, col, -i1 * kappa * x * y));
                        }
                    }
                }
            }
            h.push((col, col, diag));
        }
        let heff = Csr::from_triplets(n, h);

        let jumps = (0..modes)
            .map(|j| {
                let mut t = Vec::new();
                for col in 0..n {
                    if let Some((row, a)) = basis.lower(j, col) {
                        t.push((row, col, C64::new(spec.loss[j].sqrt() * a, 0.0)));
                    }
                    if coupled {
                        let w = spec.source_loss.sqrt() * spec.input_weights[j];
                        if let Some((row, a)) = basis.lower(modes, col) {
                            if w != 0.0 {
                                t.push((row, col, C64::new(w * a, 0.0)));
                            }
                        }
                    }
                }
                Csr::from_triplets(n, t)
            })
            .collect();
        Generator { n, heff, jumps }
    }

    /// `out = L(rho)`; `scratch` must hold `n * n` entries.
    fn apply(&self, rho: &[C64], out: &mut [C64], scratch: &mut [C64]) {
        let n = self.n;
        let mi = C64::new(0.0, -1.0);
        out.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        for r in 0..n {
            let orow = &mut out[r * n..(r + 1) * n];
            for (c, h) in self.heff.row(r) {
                let coef = mi * h;
                for (o, x) in orow.iter_mut().zip(&rho[c * n..(c + 1) * n]) {
                    *o += coef * x;
                }
            }
        }
        for jump in &self.jumps {
            // scratch = C rho
            for r in 0..n {
                let zrow = &mut scratch[r * n..(r + 1) * n];
                zrow.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
                for (c, v) in jump.row(r) {
                    for (z, x) in zrow.iter_mut().zip(&rho[c * n..(c + 1) * n]) {
                        *z += v * x;
                    }
                }
            }
            // out += 1/2 (C rho) C^dag
            for r in 0..n {
                let zrow = &scratch[r * n..(r + 1) * n];
                let orow = &mut out[r * n..(r + 1) * n];
                for (j, o) in orow.iter_mut().enumerate() {
                    let mut acc = C64::new(0.0, 0.0);
                    for (l, v) in jump.row(j) {
                        acc += zrow[l] * v.conj();
                    }
                    *o += 0.5 * acc;
                }
            }
        }
        // out = A + A^dag
        for i in 0..n {
            let d = out[i * n + i];
            out[i * n + i] = C64::new(2.0 * d.re, 0.0);
            for j in i + 1..n {
                let a = out[i * n + j];
                let b = out[j * n + i];
                out[i * n + j] = a + b.conj();
                out[j * n + i] = b + a.conj();
            }
        }
    }
}

struct Rk4 {
    gen: Generator,
    k: Vec<C64>,
    acc: Vec<C64>,
    tmp: Vec<C64>,
    scratch: Vec<C64>,
}

impl Rk4 {
    fn new(gen: Generator) -> Self {
        let nn = gen.n * gen.n;
        let z = C64::new(0.0, 0.0);
        Rk4 { gen, k: vec![z; nn], acc: vec![z; nn], tmp: vec![z; nn], scratch: vec![z; nn] }
    }

    fn step(&mut self, rho: &mut [C64], dt: f64) {
        let Rk4 { gen, k, acc, tmp, scratch } = self;
        gen.apply(rho, acc, scratch);
        for ((t, r), a) in tmp.iter_mut().zip(rho.iter()).zip(acc.iter()) {
            *t = r + a * (0.5 * dt);
        }
        gen.apply(tmp, k, scratch);
        for (((t, r), a), kk) in tmp.iter_mut().zip(rho.iter()).zip(acc.iter_mut()).zip(k.iter()) {
            *a += kk * 2.0;
            *t = r + kk * (0.5 * dt);
        }
        gen.apply(tmp, k, scratch);
        for (((t, r), a), kk) in tmp.iter_mut().zip(rho.iter()).zip(acc.iter_mut()).zip(k.iter()) {
            *a += kk * 2.0;
            *t = r + kk * dt;
        }
        gen.apply(tmp, k, scratch);
        for ((r, a), kk) in rho.iter_mut().zip(acc.iter()).zip(k.iter()) {
            *r += (a + kk) * (dt / 6.0);
        }
    }
}

fn top_level_population(rho: &FockDensityMatrix) -> f64 {
    let n = rho.dim();
    let mut worst = 0.0f64;
    for (k, &d) in rho.dims().iter().enumerate() {
        let occ = FockDensityMatrix::occupation_table(rho.dims(), k);
        let p: f64 = (0..n).filter(|&i| occ[i] == d - 1).map(|i| rho.get(i, i).re).sum();
        worst = worst.max(p);
    }
    worst
}

/// Integrate the cascade master equation on the record grid of `schedule`.
///
/// `rho0` is the reservoir state (one subsystem per mode). During the
/// relaxation phase the source is decoupled and frozen, so the reservoir is
/// evolved alone; at injection the source state is attached as the last
/// subsystem. Without a source, the reservoir runs through both phases alone.
pub fn evolve_master(
    rho0: &FockDensityMatrix,
    spec: &ReservoirSpec,
    source0: Option<&FockDensityMatrix>,
    schedule: &Schedule,
    config: &MasterConfig,
) -> Result<MasterRun> {
    spec.validate()?;
    let steps = schedule.steps()?;
    if rho0.dims().len() != spec.n_modes {
        return Err(invalid("reservoir state must have one subsystem per mode"));
    }
    if let Some(src) = source0 {
        if src.dims().len() != 1 {
            return Err(invalid("source state must be single-mode"));
        }
    }
    let full_dim = rho0.dim() * source0.map_or(1, |s| s.dim());
    if full_dim > MAX_ORACLE_DIM {
        return Err(invalid(format!(
            "oracle dimension {full_dim} exceeds the limit of {MAX_ORACLE_DIM} \
             (density matrix of {full_dim}^2 entries)"
        )));
    }
    if !(config.dt > 0.0) {
        return Err(invalid("oracle step must be positive"));
    }
    let record_dt = schedule.dt * schedule.record_stride as f64;
    let substeps = (record_dt / config.dt).round() as usize;
    if substeps == 0 || (substeps as f64 * config.dt - record_dt).abs() > 1e-9 * record_dt.max(1.0) {
        return Err(invalid("oracle step must divide the record interval"));
    }
    let relax_records = steps.relax / schedule.record_stride;
    let total_records = steps.total() / schedule.record_stride;

    let modes = spec.n_modes;
    let mut rho = rho0.clone();
    let mut stepper = Rk4::new(Generator::new(spec, &Basis::new(rho.dims()), false));
    let mut coupled = false;

    let mut times = Vec::with_capacity(total_records + 1);
    let mut mean_n = Vec::with_capacity(total_records + 1);
    let mut source_occupation = Vec::with_capacity(total_records + 1);
    let mut max_trace_drift = 0.0f64;
    let mut max_herm = 0.0f64;
    let mut max_top = 0.0f64;

    for rec in 0..=total_records {
        if rec > 0 {
            for _ in 0..substeps {
                stepper.step(rho.data_mut(), config.dt);
            }
        }
        let t = rec as f64 * record_dt;
        if rec == relax_records && !coupled {
            if let Some(src) = source0 {
                rho = rho.tensor(src);
                stepper = Rk4::new(Generator::new(spec, &Basis::new(rho.dims()), true));
                coupled = true;
            }
        }
        let drift = (rho.trace() - C64::new(1.0, 0.0)).norm();
        if !(drift <= config.trace_tolerance) {
            return Err(Error::TraceDrift { drift, time: t });
        }
        max_trace_drift = max_trace_drift.max(drift);
        max_herm = max_herm.max(rho.hermiticity_error());
        max_top = max_top.max(top_level_population(&rho));
        let occ: Vec<f64> = (0..modes).map(|j| expect_occupation(&rho, j)).collect::<Result<_>>()?;
        mean_n.push(occ);
        source_occupation.push(if coupled { expect_occupation(&rho, modes)? } else { 0.0 });
        times.push(t);
    }

    let se_n = vec![vec![0.0; modes]; times.len()];
    Ok(MasterRun {
        series: OccupationSeries { times, injection_start: schedule.t_relax, mean_n, se_n, divergence_fraction: 0.0 },
        source_occupation,
        max_trace_drift,
        max_hermiticity_error: max_herm,
        max_top_level_population: max_top,
        final_state: rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::build_state_fock;
    use crate::sampler::StateSpec;

    fn quick_schedule(t_relax: f64, t_final: f64) -> Schedule {
        Schedule { t_relax, t_final, dt: 0.05, record_stride: 10 }
    }

    #[test]
    fn vacuum_stays_vacuum() {
        let spec = ReservoirSpec::single_mode(0.0, 0.0, 0.0, 1.0);
        let rho0 = FockDensityMatrix::vacuum(&[6]);
        let run = evolve_master(&rho0, &spec, None, &quick_schedule(1.0, 1.0), &MasterConfig::default()).unwrap();
        assert!(run.series.mean_n.iter().all(|r| r[0] == 0.0));
    }

    #[test]
    fn driven_linear_mode_reaches_analytic_steady_state() {
        let spec = ReservoirSpec::single_mode(0.0, 0.0, 1.0, 1.0);
        let rho0 = FockDensityMatrix::vacuum(&[30]);
        let sched = quick_schedule(0.0, 30.0);
        let run = evolve_master(&rho0, &spec, None, &sched, &MasterConfig::default()).unwrap();
        let last = run.series.mean_n.last().unwrap()[0];
        // 4 F^2 / gamma^2 minus a residual transient of 4 e^{-t/2}... squared terms.
        let t = 30.0f64;
        let exact = 4.0 * (1.0 - (-t / 2.0).exp()).powi(2);
        assert!((last - exact).abs() < 1e-6, "{last} vs {exact}");
        assert!((last - 4.0).abs() < 1e-5);
        assert!(run.max_trace_drift < 1e-8);
    }

    #[test]
    fn linear_mode_tracks_coherent_amplitude() {
        // For U = 0 the state stays coherent with alpha(t) = -2iF/gamma (1 - e^{-gamma t/2}).
        let spec = ReservoirSpec::single_mode(0.0, 0.0, 0.7, 1.0);
        let rho0 = FockDensityMatrix::vacuum(&[20]);
        let run = evolve_master(&rho0, &spec, None, &quick_schedule(0.0, 5.0), &MasterConfig::default()).unwrap();
        for (t, n) in run.series.times.iter().zip(&run.series.mean_n) {
            let a = 1.4 * (1.0 - (-t / 2.0).exp());
            assert!((n[0] - a * a).abs() < 1e-9);
        }
    }

    #[test]
    fn coherent_source_feeds_linear_mode() {
        // Cascade with U = 0 and F = 0: s(t) = beta e^{-eta t / 2}, and
        // d alpha/dt = -alpha/2 - W s.  With W = 1 (eta = 1) the solution is
        // alpha(t) = -W beta t e^{-t/2}.
        let spec = ReservoirSpec::single_mode(0.0, 0.0, 0.0, 1.0).with_input_weights(vec![1.0]);
        let beta = C64::new(0.8, 0.3);
        let src = build_state_fock(&StateSpec::Coherent { beta }, 12).unwrap();
        let rho0 = FockDensityMatrix::vacuum(&[12]);
        let sched = quick_schedule(0.5, 4.0);
        let run = evolve_master(&rho0, &spec, Some(&src), &sched, &MasterConfig::default()).unwrap();
        for (k, t) in run.series.times.iter().enumerate() {
            let tau = (t - 0.5).max(0.0);
            let alpha = beta * tau * (-tau / 2.0).exp();
            assert!((run.series.mean_n[k][0] - alpha.norm_sqr()).abs() < 1e-7, "t={t}");
            if *t >= 0.5 {
                let ns = beta.norm_sqr() * (-tau).exp();
                assert!((run.source_occupation[k] - ns).abs() < 1e-7);
            }
        }
        assert!(run.max_trace_drift < 1e-8);
        assert!(run.final_state.hermiticity_error() < 1e-12);
        assert!(run.final_state.min_eigenvalue() > -1e-8);
    }

    #[test]
    fn oversized_system_is_refused() {
        let spec = crate::model::build_reservoir(crate::model::LatticeShape::new(1, 3).unwrap(), 0.1, 0.5, 1).unwrap();
        let rho0 = FockDensityMatrix::vacuum(&[20, 20, 20]);
        let err = evolve_master(&rho0, &spec, None, &quick_schedule(1.0, 1.0), &MasterConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(ref m) if m.contains("8000")));
    }
}
