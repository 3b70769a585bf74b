// SPDX-License-Identifier: Apache-2.0

//! Exact truncated-Fock-space reference for small systems.
//!
//! Composite spaces are ordered reservoir modes first, source mode last, with
//! the last subsystem varying fastest in the flattened index.

mod master;
mod wigner;

pub use master::{evolve_master, MasterConfig, MasterRun, MAX_ORACLE_DIM};
pub use wigner::{wigner_grid, WignerGrid};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

// Unused when std is linked (tests), which provides the inherent methods.
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::sampler::StateSpec;
use crate::C64;

/// Largest tail mass a constructed state may lose to truncation.
pub const TAIL_TOLERANCE: f64 = 1e-8;

/// Truncated annihilation and creation operators, `b|n> = sqrt(n)|n-1>`.
pub fn ladder_ops(d: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if d < 2 {
        return Err(invalid("ladder operators need d >= 2"));
    }
    let mut b = DMatrix::zeros(d, d);
    for n in 1..d {
        b[(n - 1, n)] = (n as f64).sqrt();
    }
    let bdag = b.transpose();
    Ok((b, bdag))
}

/// Density matrix on a product of truncated Fock spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct FockDensityMatrix {
    dims: Vec<usize>,
    data: Vec<C64>,
}

impl FockDensityMatrix {
    pub fn new(dims: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if dims.is_empty() || dims.contains(&0) || data.len() != n * n {
            return Err(invalid("density matrix data does not match its dimensions"));
        }
        Ok(Self { dims, data })
    }

    /// `|psi><psi|` for a single mode.
    pub fn from_pure(amplitudes: &[C64]) -> Self {
        let d = amplitudes.len();
        let mut data = vec![C64::new(0.0, 0.0); d * d];
        for i in 0..d {
            for j in 0..d {
                data[i * d + j] = amplitudes[i] * amplitudes[j].conj();
            }
        }
        Self { dims: vec![d], data }
    }

    /// Diagonal single-mode state with the given populations.
    pub fn from_populations(populations: &[f64]) -> Self {
        let d = populations.len();
        let mut data = vec![C64::new(0.0, 0.0); d * d];
        for (i, p) in populations.iter().enumerate() {
            data[i * d + i] = C64::new(*p, 0.0);
        }
        Self { dims: vec![d], data }
    }

    /// Vacuum on every subsystem.
    pub fn vacuum(dims: &[usize]) -> Self {
        let n: usize = dims.iter().product();
        let mut data = vec![C64::new(0.0, 0.0); n * n];
        data[0] = C64::new(1.0, 0.0);
        Self { dims: dims.to_vec(), data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Total Hilbert-space dimension.
    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.dim() + j]
    }

    pub fn trace(&self) -> C64 {
        let n = self.dim();
        (0..n).map(|i| self.data[i * n + i]).sum()
    }

    /// Largest `|rho_ij - conj(rho_ji)|`.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.data[i * n + j] - self.data[j * n + i].conj()).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let n = self.dim();
        let m = DMatrix::from_fn(n, n, |i, j| (self.data[i * n + j] + self.data[j * n + i].conj()) * 0.5);
        m.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// `rho (x) other`, with `other`'s subsystems appended last.
    pub fn tensor(&self, other: &FockDensityMatrix) -> FockDensityMatrix {
        let (na, nb) = (self.dim(), other.dim());
        let n = na * nb;
        let mut data = vec![C64::new(0.0, 0.0); n * n];
        for ia in 0..na {
            for ja in 0..na {
                let a = self.data[ia * na + ja];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for ib in 0..nb {
                    let row = (ia * nb + ib) * n + ja * nb;
                    for jb in 0..nb {
                        data[row + jb] = a * other.data[ib * nb + jb];
                    }
                }
            }
        }
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        FockDensityMatrix { dims, data }
    }

    /// Occupation of subsystem `mode` in each basis state.
    pub(crate) fn occupation_table(dims: &[usize], mode: usize) -> Vec<usize> {
        let stride: usize = dims[mode + 1..].iter().product();
        let total: usize = dims.iter().product();
        (0..total).map(|i| (i / stride) % dims[mode]).collect()
    }
}

/// `Tr(rho b_mode^dag b_mode)`, returned with the magnitude of its imaginary residue.
pub fn expect_occupation_with_residue(rho: &FockDensityMatrix, mode: usize) -> Result<(f64, f64)> {
    if mode >= rho.dims.len() {
        return Err(invalid(format!("mode {mode} out of range")));
    }
    let n = rho.dim();
    let occ = FockDensityMatrix::occupation_table(&rho.dims, mode);
    let mut acc = C64::new(0.0, 0.0);
    for (i, &k) in occ.iter().enumerate() {
        acc += rho.data[i * n + i] * k as f64;
    }
    Ok((acc.re, acc.im.abs()))
}

/// `Tr(rho b_mode^dag b_mode)`.
pub fn expect_occupation(rho: &FockDensityMatrix, mode: usize) -> Result<f64> {
    expect_occupation_with_residue(rho, mode).map(|(n, _)| n)
}

/// `Tr(rho b^2)` for a single-mode state.
pub fn expect_b_squared(rho: &FockDensityMatrix) -> C64 {
    let d = rho.dim();
    // Tr(rho b^2) = sum_n rho[n][n-2] sqrt(n (n-1))
    (2..d).map(|n| rho.get(n, n - 2) * ((n * (n - 1)) as f64).sqrt()).sum()
}

fn coherent_amplitudes(beta: C64, d: usize) -> Vec<C64> {
    let mut amps = Vec::with_capacity(d);
    let mut c = C64::new((-0.5 * beta.norm_sqr()).exp(), 0.0);
    for n in 0..d {
        if n > 0 {
            c = c * beta / (n as f64).sqrt();
        }
        amps.push(c);
    }
    amps
}

/// Squared norm of the cat superposition `|beta> + e^{i phase}|-beta>` before normalization.
pub(crate) fn cat_norm_factor(beta: C64, phase: f64) -> f64 {
    2.0 * (1.0 + (-2.0 * beta.norm_sqr()).exp() * phase.cos())
}

/// Number-basis amplitudes of `S(zeta)|0>` with `zeta = r e^{2 i theta}`.
fn squeezed_amplitudes(r: f64, theta: f64, d: usize) -> Vec<C64> {
    let mut amps = vec![C64::new(0.0, 0.0); d];
    let ratio = -C64::from_polar(r.tanh(), 2.0 * theta);
    let mut c = C64::new(1.0 / r.cosh().sqrt(), 0.0);
    let mut n = 0;
    while n < d {
        amps[n] = c;
        let m = (n / 2 + 1) as f64;
        c = c * ratio * ((2.0 * m - 1.0) / (2.0 * m)).sqrt();
        n += 2;
    }
    amps
}

/// Single-mode density matrix of an input state, truncated to `d` levels.
///
/// The squeezed vacuum is `S(zeta)|0>` with the conventional squeezing
/// operator `exp((zeta^* b^2 - zeta b^dag^2)/2)`, `zeta = r e^{2 i theta}`;
/// its `<b^dag b>` and `<b^2>` equal the moments of
/// [`crate::sampler::sample_squeezed_vacuum`].
pub fn build_state_fock(spec: &StateSpec, d: usize) -> Result<FockDensityMatrix> {
    spec.validate()?;
    if d < 2 {
        return Err(invalid("Fock truncation needs d >= 2"));
    }
    let (rho, kept) = match *spec {
        StateSpec::Coherent { beta } => {
            let amps = coherent_amplitudes(beta, d);
            let kept: f64 = amps.iter().map(|c| c.norm_sqr()).sum();
            (FockDensityMatrix::from_pure(&amps), kept)
        }
        StateSpec::Cat { beta, phase } => {
            let norm2 = cat_norm_factor(beta, phase);
            if !(norm2 > 0.0) {
                return Err(invalid("cat superposition vanishes for this amplitude and phase"));
            }
            let plus = coherent_amplitudes(beta, d);
            let minus = coherent_amplitudes(-beta, d);
            let rot = C64::from_polar(1.0, phase);
            let inv = 1.0 / norm2.sqrt();
            let amps: Vec<C64> = plus.iter().zip(&minus).map(|(p, m)| (p + rot * m) * inv).collect();
            let kept: f64 = amps.iter().map(|c| c.norm_sqr()).sum();
            (FockDensityMatrix::from_pure(&amps), kept)
        }
        StateSpec::SqueezedVacuum { r, theta } => {
            let amps = squeezed_amplitudes(r, theta, d);
            let kept: f64 = amps.iter().map(|c| c.norm_sqr()).sum();
            (FockDensityMatrix::from_pure(&amps), kept)
        }
        StateSpec::Thermal { nbar } => {
            let q = nbar / (1.0 + nbar);
            let pops: Vec<f64> = (0..d).map(|n| q.powi(n as i32) / (1.0 + nbar)).collect();
            let kept = 1.0 - q.powi(d as i32);
            (FockDensityMatrix::from_populations(&pops), kept)
        }
    };
    let tail = (1.0 - kept).max(0.0);
    if tail > TAIL_TOLERANCE {
        return Err(Error::FockTruncation { dim: d, tail });
    }
    let mut rho = rho;
    let tr = rho.trace().re;
    for v in rho.data_mut() {
        *v /= tr;
    }
    Ok(rho)
}

/// Smallest truncation in `[2, max_d]` whose tail mass is within tolerance.
pub fn minimal_truncation(spec: &StateSpec, max_d: usize) -> Result<usize> {
    for d in 2..=max_d {
        match build_state_fock(spec, d) {
            Ok(_) => return Ok(d),
            Err(Error::FockTruncation { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(invalid(format!("state needs more than {max_d} Fock levels")))
}
