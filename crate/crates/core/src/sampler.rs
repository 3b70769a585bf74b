// SPDX-License-Identifier: Apache-2.0

//! Positive-P samples `(alpha, alpha~)` of single-mode input states.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

// Unused when std is linked (tests), which provides the inherent methods.
#[allow(unused_imports)]
use num_traits::Float;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::oracle::{cat_norm_factor, FockDensityMatrix};
use crate::rng::{stream, Purpose};
use crate::C64;

/// Boundary-to-peak density ratio tolerated by the cat grid.
pub const GRID_BOUNDARY_LIMIT: f64 = 1e-12;

/// Batches used for standard errors of sample means.
pub const SE_BATCHES: usize = 100;

/// Input state of the source mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateSpec {
    Coherent {
        beta: C64,
    },
    Thermal {
        nbar: f64,
    },
    SqueezedVacuum {
        r: f64,
        theta: f64,
    },
    /// `N (|beta> + e^{i phase} |-beta>)`.
    Cat {
        beta: C64,
        #[serde(rename = "cat_phase", default)]
        phase: f64,
    },
}

impl StateSpec {
    pub fn validate(&self) -> Result<()> {
        let finite_c = |c: &C64| c.re.is_finite() && c.im.is_finite();
        match self {
            StateSpec::Coherent { beta } if !finite_c(beta) => Err(invalid("beta must be finite")),
            StateSpec::Thermal { nbar } if !(*nbar >= 0.0) || !nbar.is_finite() => {
                Err(invalid("nbar must be finite and >= 0"))
            }
            StateSpec::SqueezedVacuum { r, theta } if !(*r >= 0.0) || !r.is_finite() || !theta.is_finite() => {
                Err(invalid("squeezing needs finite r >= 0 and finite theta"))
            }
            StateSpec::Cat { beta, phase } if !finite_c(beta) || !phase.is_finite() => {
                Err(invalid("cat needs finite beta and phase"))
            }
            _ => Ok(()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            StateSpec::Coherent { .. } => "coherent",
            StateSpec::Thermal { .. } => "thermal",
            StateSpec::SqueezedVacuum { .. } => "squeezed_vacuum",
            StateSpec::Cat { .. } => "cat",
        }
    }

    /// Exact `<b^dag b>` of the state.
    pub fn mean_occupation(&self) -> f64 {
        match *self {
            StateSpec::Coherent { beta } => beta.norm_sqr(),
            StateSpec::Thermal { nbar } => nbar,
            StateSpec::SqueezedVacuum { r, .. } => r.sinh().powi(2),
            StateSpec::Cat { beta, phase } => {
                let b2 = beta.norm_sqr();
                let e = (-2.0 * b2).exp() * phase.cos();
                b2 * (1.0 - e) / (1.0 + e)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub alpha: C64,
    pub alpha_tilde: C64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhaseSampleSet {
    pub pairs: Vec<PhasePoint>,
}

impl PhaseSampleSet {
    /// Checked constructor: non-empty and finite.
    pub fn new(pairs: Vec<PhasePoint>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(invalid("sample set is empty"));
        }
        let finite = |c: C64| c.re.is_finite() && c.im.is_finite();
        if pairs.iter().any(|p| !finite(p.alpha) || !finite(p.alpha_tilde)) {
            return Err(invalid("sample set contains non-finite entries"));
        }
        Ok(PhaseSampleSet { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn need_count(count: usize) -> Result<()> {
    if count == 0 {
        return Err(invalid("sample count must be >= 1"));
    }
    Ok(())
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn sample_coherent(beta: C64, count: usize) -> Result<PhaseSampleSet> {
    need_count(count)?;
    StateSpec::Coherent { beta }.validate()?;
    Ok(PhaseSampleSet { pairs: vec![PhasePoint { alpha: beta, alpha_tilde: beta }; count] })
}

/// `alpha = alpha~` from a circular Gaussian with `<|alpha|^2> = nbar`.
pub fn sample_thermal(nbar: f64, count: usize, seed: u64) -> Result<PhaseSampleSet> {
    need_count(count)?;
    StateSpec::Thermal { nbar }.validate()?;
    let scale = (0.5 * nbar).sqrt();
    let pairs = (0..count)
        .map(|i| {
            let mut rng = stream(seed, Purpose::Sampler, i as u64);
            let a = C64::new(normal(&mut rng), normal(&mut rng)) * scale;
            PhasePoint { alpha: a, alpha_tilde: a }
        })
        .collect();
    Ok(PhaseSampleSet { pairs })
}

/// Gaussian recipe for `S(r e^{2i theta})|0>`:
/// `alpha = e^{i theta} nu + delta`, `alpha~ = e^{i theta} nu - delta`.
pub fn sample_squeezed_vacuum(r: f64, theta: f64, count: usize, seed: u64) -> Result<PhaseSampleSet> {
    need_count(count)?;
    StateSpec::SqueezedVacuum { r, theta }.validate()?;
    let sx = ((-r).exp() * r.cosh() / 2.0).sqrt();
    let sy = (r.exp() * r.cosh() / 2.0).sqrt();
    let rot = C64::from_polar(1.0, theta);
    let pairs = (0..count)
        .map(|i| {
            let mut rng = stream(seed, Purpose::Sampler, i as u64);
            let q: [f64; 4] = core::array::from_fn(|_| normal(&mut rng));
            let delta = C64::new(q[0], q[1]) / 2f64.sqrt();
            let nu = rot * C64::new(sx * q[2], sy * q[3]);
            PhasePoint { alpha: nu + delta, alpha_tilde: nu - delta }
        })
        .collect();
    Ok(PhaseSampleSet { pairs })
}

/// Canonical positive-P density of the cat `N(|beta> + e^{i phase}|-beta>)`:
///
/// ```text
/// N^2/(4 pi^2) e^{-(|a|^2+|a~|^2)/2} e^{-|beta|^2} |e^{u^* beta} + e^{i phase} e^{-u^* beta}|^2
/// ```
///
/// with `u = (a + a~)/2`.
pub fn cat_canonical_density(alpha: C64, alpha_tilde: C64, beta: C64, phase: f64) -> f64 {
    let u = (alpha + alpha_tilde) * 0.5;
    let n2 = 1.0 / cat_norm_factor(beta, phase);
    let gauss = (-0.5 * (alpha.norm_sqr() + alpha_tilde.norm_sqr()) - beta.norm_sqr()).exp();
    n2 * gauss * cat_bracket(u, beta, phase) / (4.0 * PI * PI)
}

fn cat_bracket(u: C64, beta: C64, phase: f64) -> f64 {
    let z = u.conj() * beta;
    (z.exp() + C64::from_polar(1.0, phase) * (-z).exp()).norm_sqr()
}

/// Square grid `[-half_width, half_width]` with `points` nodes on each of
/// the four real axes `(Re a, Im a, Re a~, Im a~)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub half_width: f64,
    pub points: usize,
}

impl GridSpec {
    /// Margin added to `|beta|` by [`GridSpec::for_cat`].
    pub const CAT_MARGIN: f64 = 7.5;

    pub fn for_cat(beta: C64) -> Self {
        GridSpec { half_width: beta.norm() + Self::CAT_MARGIN, points: 64 }
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.points).map(|i| -self.half_width + i as f64 * h).collect()
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.points - 1) as f64
    }

    fn validate(&self) -> Result<()> {
        if self.points < 3 || !(self.half_width > 0.0) || !self.half_width.is_finite() {
            return Err(invalid("grid needs >= 3 points and a positive finite half width"));
        }
        Ok(())
    }
}

/// Tabulated cat density, factored as `g(x1) g(x2) g(x3) g(x4) B(i1+i3, i2+i4)`
/// where `g` is the per-axis Gaussian and `B` the bracket on the grid of `u`.
struct CatTable {
    m: usize,
    nodes: Vec<f64>,
    gauss: Vec<f64>,
    bracket: Vec<f64>,
}

impl CatTable {
    fn new(beta: C64, phase: f64, grid: &GridSpec) -> Self {
        let m = grid.points;
        let nodes = grid.nodes();
        let gauss: Vec<f64> = nodes.iter().map(|x| (-0.5 * x * x).exp()).collect();
        let w = 2 * m - 1;
        let mut bracket = vec![0.0; w * w];
        for a in 0..w {
            // u on the half-step lattice: (x_i + x_k)/2 for i + k = a
            let ur = -grid.half_width + a as f64 * grid.spacing() * 0.5;
            for b in 0..w {
                let ui = -grid.half_width + b as f64 * grid.spacing() * 0.5;
                bracket[a * w + b] = cat_bracket(C64::new(ur, ui), beta, phase);
            }
        }
        CatTable { m, nodes, gauss, bracket }
    }

    #[inline]
    fn weight(&self, i: [usize; 4]) -> f64 {
        let w = 2 * self.m - 1;
        self.gauss[i[0]]
            * self.gauss[i[1]]
            * self.gauss[i[2]]
            * self.gauss[i[3]]
            * self.bracket[(i[0] + i[2]) * w + (i[1] + i[3])]
    }
}

fn pick(cdf: &[f64], u: f64) -> usize {
    let target = u * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= target).min(cdf.len() - 1)
}

fn cumulative(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    values
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

/// Cat samples drawn from the canonical density tabulated on a 4D grid.
///
/// Grid nodes are drawn with probability proportional to the density, one
/// axis at a time from nested marginals. Fails if the density on the grid
/// boundary exceeds [`GRID_BOUNDARY_LIMIT`] times the peak.
pub fn sample_cat(beta: C64, phase: f64, count: usize, grid: &GridSpec, seed: u64) -> Result<PhaseSampleSet> {
    need_count(count)?;
    StateSpec::Cat { beta, phase }.validate()?;
    grid.validate()?;
    if !(cat_norm_factor(beta, phase) > 0.0) {
        return Err(invalid("cat superposition vanishes for this amplitude and phase"));
    }
    let t = CatTable::new(beta, phase, grid);
    let m = t.m;

    // m3[i1][i2][i3] = sum over i4; track boundary density as we go.
    let mut m3 = vec![0.0; m * m * m];
    let mut peak: f64 = 0.0;
    let mut edge_max: f64 = 0.0;
    let mut edge_sum = 0.0;
    for i1 in 0..m {
        for i2 in 0..m {
            for i3 in 0..m {
                let mut s = 0.0;
                for i4 in 0..m {
                    let v = t.weight([i1, i2, i3, i4]);
                    s += v;
                    peak = peak.max(v);
                    if [i1, i2, i3, i4].iter().any(|&i| i == 0 || i == m - 1) {
                        edge_max = edge_max.max(v);
                        edge_sum += v;
                    }
                }
                m3[(i1 * m + i2) * m + i3] = s;
            }
        }
    }
    let m2: Vec<f64> = m3.chunks(m).map(|c| c.iter().sum()).collect();
    let m1: Vec<f64> = m2.chunks(m).map(|c| c.iter().sum()).collect();
    let total: f64 = m1.iter().sum();
    let ratio = edge_max / peak;
    if !(ratio <= GRID_BOUNDARY_LIMIT) {
        return Err(Error::GridTruncation { ratio, limit: GRID_BOUNDARY_LIMIT, boundary_mass: edge_sum / total });
    }

    let cdf1 = cumulative(m1.iter().copied());
    let cdf2: Vec<Vec<f64>> = m2.chunks(m).map(|c| cumulative(c.iter().copied())).collect();
    let cdf3: Vec<Vec<f64>> = m3.chunks(m).map(|c| cumulative(c.iter().copied())).collect();
    let mut row = vec![0.0; m];
    let pairs = (0..count)
        .map(|n| {
            let mut rng = stream(seed, Purpose::Sampler, n as u64);
            let i1 = pick(&cdf1, rng.gen());
            let i2 = pick(&cdf2[i1], rng.gen());
            let i3 = pick(&cdf3[i1 * m + i2], rng.gen());
            let mut acc = 0.0;
            for (i4, r) in row.iter_mut().enumerate() {
                acc += t.weight([i1, i2, i3, i4]);
                *r = acc;
            }
            let i4 = pick(&row, rng.gen());
            PhasePoint { alpha: C64::new(t.nodes[i1], t.nodes[i2]), alpha_tilde: C64::new(t.nodes[i3], t.nodes[i4]) }
        })
        .collect();
    Ok(PhaseSampleSet { pairs })
}

/// Samples for any [`StateSpec`]; `grid` overrides the cat grid default.
pub fn sample_state(spec: &StateSpec, count: usize, seed: u64, grid: Option<GridSpec>) -> Result<PhaseSampleSet> {
    match *spec {
        StateSpec::Coherent { beta } => sample_coherent(beta, count),
        StateSpec::Thermal { nbar } => sample_thermal(nbar, count, seed),
        StateSpec::SqueezedVacuum { r, theta } => sample_squeezed_vacuum(r, theta, count, seed),
        StateSpec::Cat { beta, phase } => {
            let g = grid.unwrap_or_else(|| GridSpec::for_cat(beta));
            sample_cat(beta, phase, count, &g, seed)
        }
    }
}

/// `(1/4 pi^2) e^{-|a-a~|^2/4} <u|rho|u>`, `u = (a+a~)/2`, for a single-mode
/// `rho`. The flag is set when `|u|^2 > d/2`, where the truncated overlap
/// becomes unreliable.
pub fn canonical_density_from_fock(rho: &FockDensityMatrix, alpha: C64, alpha_tilde: C64) -> Result<(f64, bool)> {
    if rho.dims().len() != 1 {
        return Err(invalid("canonical density needs a single-mode density matrix"));
    }
    let d = rho.dim();
    let u = (alpha + alpha_tilde) * 0.5;
    let warn = u.norm_sqr() > d as f64 / 2.0;
    let mut c = Vec::with_capacity(d);
    let mut a = C64::new((-0.5 * u.norm_sqr()).exp(), 0.0);
    for n in 0..d {
        if n > 0 {
            a = a * u / (n as f64).sqrt();
        }
        c.push(a);
    }
    let mut overlap = C64::new(0.0, 0.0);
    for (n, cn) in c.iter().enumerate() {
        let mut row = C64::new(0.0, 0.0);
        for (k, ck) in c.iter().enumerate() {
            row += rho.get(n, k) * ck;
        }
        overlap += cn.conj() * row;
    }
    let gauss = (-(alpha - alpha_tilde).norm_sqr() / 4.0).exp();
    Ok((gauss * overlap.re.max(0.0) / (4.0 * PI * PI), warn))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mean: C64,
    /// Standard errors of the real and imaginary parts.
    pub se_re: f64,
    pub se_im: f64,
}

impl MomentEstimate {
    /// Combined standard error `max(se_re, se_im)`.
    pub fn se(&self) -> f64 {
        self.se_re.max(self.se_im)
    }
}

/// Batch-means estimate of a sample mean with up to [`SE_BATCHES`] batches.
/// Values are shifted by the first sample, so identical samples give a
/// standard error of exactly zero.
pub fn batch_mean(values: &[C64]) -> Result<MomentEstimate> {
    let s = values.len();
    if s < 2 {
        return Err(invalid("moment estimate needs at least 2 samples"));
    }
    let x0 = values[0];
    let b = SE_BATCHES.min(s);
    let mut means = Vec::with_capacity(b);
    for k in 0..b {
        let (lo, hi) = (k * s / b, (k + 1) * s / b);
        let sum: C64 = values[lo..hi].iter().map(|v| v - x0).sum();
        means.push(sum / (hi - lo) as f64);
    }
    let total: C64 = values.iter().map(|v| v - x0).sum();
    let shift = total / s as f64;
    let grand: C64 = means.iter().sum::<C64>() / b as f64;
    let (mut vr, mut vi) = (0.0, 0.0);
    for m in &means {
        vr += (m.re - grand.re).powi(2);
        vi += (m.im - grand.im).powi(2);
    }
    let denom = ((b - 1) * b) as f64;
    Ok(MomentEstimate { mean: x0 + shift, se_re: (vr / denom).sqrt(), se_im: (vi / denom).sqrt() })
}

/// Mean of `alpha^p (alpha~^*)^q` with batch-means standard errors.
pub fn estimate_moment(samples: &PhaseSampleSet, p: u32, q: u32) -> Result<MomentEstimate> {
    let values: Vec<C64> = samples.pairs.iter().map(|pt| pt.alpha.powu(p) * pt.alpha_tilde.conj().powu(q)).collect();
    batch_mean(&values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::build_state_fock;

    #[test]
    fn coherent_pairs_are_exact() {
        let b = C64::new(1.0, 2.0);
        let s = sample_coherent(b, 3).unwrap();
        assert!(s.pairs.iter().all(|p| p.alpha == b && p.alpha_tilde == b));
        let m = estimate_moment(&s, 1, 1).unwrap();
        assert_eq!(m.mean, C64::new(5.0, 0.0));
        assert_eq!(m.se(), 0.0);
        assert_eq!(estimate_moment(&s, 0, 0).unwrap().mean, C64::new(1.0, 0.0));
        assert!(sample_coherent(b, 0).is_err());
    }

    #[test]
    fn thermal_moments() {
        assert!(sample_thermal(-1.0, 3, 1).is_err());
        let z = sample_thermal(0.0, 5, 1).unwrap();
        assert!(z.pairs.iter().all(|p| p.alpha == C64::new(0.0, 0.0)));
        let s = sample_thermal(2.0, 100_000, 7).unwrap();
        assert!(s.pairs.iter().all(|p| p.alpha == p.alpha_tilde));
        let m = estimate_moment(&s, 1, 1).unwrap();
        assert!((m.mean.re - 2.0).abs() < 3.0 * m.se_re, "{m:?}");
    }

    #[test]
    fn squeezed_recipe_moments() {
        let s = sample_squeezed_vacuum(1.0, 0.0, 100_000, 3).unwrap();
        let n = estimate_moment(&s, 1, 1).unwrap();
        assert!((n.mean.re - 1.0f64.sinh().powi(2)).abs() < 3.0 * n.se_re, "{n:?}");
        assert!(n.mean.im.abs() < 3.0 * n.se_im);
        let aa: Vec<C64> = s.pairs.iter().map(|p| p.alpha * p.alpha_tilde).collect();
        let m = batch_mean(&aa).unwrap();
        assert!((m.mean.re + 1.0f64.sinh() * 1.0f64.cosh()).abs() < 3.0 * m.se_re, "{m:?}");
        let v = sample_squeezed_vacuum(0.0, 0.4, 100_000, 4).unwrap();
        let n0 = estimate_moment(&v, 1, 1).unwrap();
        assert!(n0.mean.re.abs() < 3.0 * n0.se_re);
    }

    #[test]
    fn seeds_reproduce() {
        let a = sample_squeezed_vacuum(0.7, 0.2, 50, 11).unwrap();
        let b = sample_squeezed_vacuum(0.7, 0.2, 50, 11).unwrap();
        assert_eq!(a, b);
        let c = sample_squeezed_vacuum(0.7, 0.2, 50, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn cat_density_shape() {
        let z = C64::new(0.0, 0.0);
        let b = C64::new(1.2, 0.0);
        assert!(cat_canonical_density(b, b, b, 0.0) > cat_canonical_density(b, -b, b, 0.0));
        let v0 = cat_canonical_density(z, z, z, 0.0);
        assert!((v0 - 1.0 / (4.0 * PI * PI)).abs() < 1e-15);
        let off = C64::new(0.1, -0.2);
        assert!(cat_canonical_density(off, z, z, 0.0) < v0);
    }

    #[test]
    fn cat_density_matches_fock_form() {
        let b = C64::new(1.2, 0.3);
        let rho = build_state_fock(&StateSpec::Cat { beta: b, phase: 0.7 }, 40).unwrap();
        for k in 0..25 {
            let a = C64::new(-2.0 + 0.17 * k as f64, 0.3 - 0.05 * k as f64);
            let at = C64::new(0.9 - 0.11 * k as f64, -1.0 + 0.09 * k as f64);
            let (f, warn) = canonical_density_from_fock(&rho, a, at).unwrap();
            assert!(!warn);
            assert!((f - cat_canonical_density(a, at, b, 0.7)).abs() < 1e-6);
        }
    }

    #[test]
    fn fock_density_vacuum_and_coherent() {
        let z = C64::new(0.0, 0.0);
        let vac = FockDensityMatrix::vacuum(&[4]);
        let (f, _) = canonical_density_from_fock(&vac, z, z).unwrap();
        assert!((f - 1.0 / (4.0 * PI * PI)).abs() < 1e-15);
        let b = C64::new(0.8, -0.4);
        let rho = build_state_fock(&StateSpec::Coherent { beta: b }, 30).unwrap();
        let (a, at) = (C64::new(0.3, 0.2), C64::new(1.1, -0.6));
        let u = (a + at) * 0.5;
        let want = (-(a - at).norm_sqr() / 4.0 - (u - b).norm_sqr()).exp() / (4.0 * PI * PI);
        let (f, _) = canonical_density_from_fock(&rho, a, at).unwrap();
        assert!((f - want).abs() < 1e-8);
        let (_, warn) = canonical_density_from_fock(&rho, C64::new(5.0, 0.0), C64::new(5.0, 0.0)).unwrap();
        assert!(warn);
    }

    #[test]
    fn cat_grid_guard() {
        let b = C64::new(1.2, 0.0);
        let small = GridSpec { half_width: 3.0, points: 16 };
        match sample_cat(b, 0.0, 10, &small, 1) {
            Err(Error::GridTruncation { ratio, .. }) => assert!(ratio > GRID_BOUNDARY_LIMIT),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn vacuum_cat_samples() {
        let s = sample_cat(C64::new(0.0, 0.0), 0.0, 20_000, &GridSpec { half_width: 7.5, points: 40 }, 5).unwrap();
        let n = estimate_moment(&s, 1, 1).unwrap();
        assert!(n.mean.re.abs() < 3.0 * n.se_re);
    }
}
