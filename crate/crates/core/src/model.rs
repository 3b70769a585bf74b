// SPDX-License-Identifier: Apache-2.0

//! Reservoir parameterization.
//!
//! All rates and energies are in units of the reservoir loss rate, so a
//! freshly built reservoir has `gamma_j = gamma_s = 1`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{stream, Purpose};
use crate::C64;

/// Tolerance on `|rho(J) - 1|` for a normalized hopping matrix.
pub const RADIUS_TOLERANCE: f64 = 1e-10;

/// Default real drive amplitude applied to every node.
pub const DEFAULT_DRIVE: f64 = 0.5;

/// Rows and columns of a square-grid lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeShape {
    pub rows: usize,
    pub cols: usize,
}

impl LatticeShape {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid(format!("lattice shape {rows}x{cols} has a zero dimension")));
        }
        Ok(Self { rows, cols })
    }

    /// A 1xN chain, used when no grid factorization is configured.
    pub fn chain(n: usize) -> Result<Self> {
        Self::new(1, n)
    }

    pub fn n_modes(&self) -> usize {
        self.rows * self.cols
    }
}

/// Nearest-neighbour pairs of a `rows x cols` grid in row-major order.
///
/// For each node the right neighbour is listed before the one below, and
/// each pair appears once with the smaller index first.
pub fn lattice_edges(rows: usize, cols: usize) -> Result<Vec<(usize, usize)>> {
    LatticeShape::new(rows, cols)?;
    let mut edges = Vec::with_capacity(2 * rows * cols - rows - cols);
    for r in 0..rows {
        for c in 0..cols {
            let j = r * cols + c;
            if c + 1 < cols {
                edges.push((j, j + 1));
            }
            if r + 1 < rows {
                edges.push((j, j + cols));
            }
        }
    }
    Ok(edges)
}

/// Largest eigenvalue modulus of a square real matrix given by rows.
pub fn spectral_radius(rows: &[Vec<f64>]) -> Result<f64> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(invalid("spectral_radius needs a square matrix"));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(invalid("spectral_radius needs finite entries"));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    let symmetric = (0..n).all(|i| (0..i).all(|j| m[(i, j)] == m[(j, i)]));
    let radius = if symmetric {
        m.symmetric_eigenvalues().iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    } else {
        m.complex_eigenvalues().iter().fold(0.0f64, |acc, v| acc.max(v.norm()))
    };
    Ok(radius)
}

/// Full parameter set of a reservoir and its coupling to the source mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirSpec {
    pub n_modes: usize,
    pub shape: LatticeShape,
    pub edges: Vec<(usize, usize)>,
    /// Symmetric real hopping matrix, zero off the declared edges.
    pub hopping: Vec<Vec<f64>>,
    pub detuning: Vec<f64>,
    pub kerr: f64,
    pub drive: Vec<C64>,
    pub loss: Vec<f64>,
    pub source_loss: f64,
    pub input_weights: Vec<f64>,
    /// Sum of squared input weights; sets the source depletion rate.
    pub eta: f64,
    /// Seed the random parts were drawn from, if any.
    pub seed: Option<u64>,
}

/// Sum of squares in index order; the one definition of `eta`.
pub fn eta_of(weights: &[f64]) -> f64 {
    weights.iter().map(|w| w * w).sum()
}

/// Draw a random reservoir on `shape`.
///
/// Hopping on each edge is uniform in (-1, 1) and the matrix is rescaled to
/// unit spectral radius; detunings are uniform in (0, 0.1); input weights
/// uniform in [0, 1]; every node gets the real drive `drive_amplitude`.
pub fn build_reservoir(shape: LatticeShape, kerr: f64, drive_amplitude: f64, seed: u64) -> Result<ReservoirSpec> {
    let shape = LatticeShape::new(shape.rows, shape.cols)?;
    if !(kerr >= 0.0) || !kerr.is_finite() {
        return Err(invalid(format!("kerr must be finite and >= 0, got {kerr}")));
    }
    if !drive_amplitude.is_finite() {
        return Err(invalid("drive amplitude must be finite"));
    }
    let n = shape.n_modes();
    let edges = lattice_edges(shape.rows, shape.cols)?;
    let mut rng = stream(seed, Purpose::Reservoir, 0);

    let mut hopping = vec![vec![0.0; n]; n];
    for &(i, j) in &edges {
        let v: f64 = rng.gen_range(-1.0..1.0);
        hopping[i][j] = v;
        hopping[j][i] = v;
    }
    let radius = spectral_radius(&hopping)?;
    if radius > 0.0 {
        for row in hopping.iter_mut() {
            for v in row.iter_mut() {
                *v /= radius;
            }
        }
    }
    let detuning: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.1)).collect();
    let input_weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let eta = eta_of(&input_weights);

    Ok(ReservoirSpec {
        n_modes: n,
        shape,
        edges,
        hopping,
        detuning,
        kerr,
        drive: vec![C64::new(drive_amplitude, 0.0); n],
        loss: vec![1.0; n],
        source_loss: 1.0,
        input_weights,
        eta,
        seed: Some(seed),
    })
}

impl ReservoirSpec {
    /// A lone mode with no source coupling, as used for stability maps.
    pub fn single_mode(detuning: f64, kerr: f64, drive: f64, loss: f64) -> Self {
        Self {
            n_modes: 1,
            shape: LatticeShape { rows: 1, cols: 1 },
            edges: Vec::new(),
            hopping: vec![vec![0.0]],
            detuning: vec![detuning],
            kerr,
            drive: vec![C64::new(drive, 0.0)],
            loss: vec![loss],
            source_loss: 1.0,
            input_weights: vec![0.0],
            eta: 0.0,
            seed: None,
        }
    }

    /// Replace the input weights, keeping `eta` consistent.
    pub fn with_input_weights(mut self, weights: Vec<f64>) -> Self {
        self.eta = eta_of(&weights);
        self.input_weights = weights;
        self
    }

    /// Check every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_modes;
        if n == 0 {
            return Err(invalid("reservoir needs at least one mode"));
        }
        if self.shape.n_modes() != n {
            return Err(invalid(format!("shape {}x{} does not hold {n} modes", self.shape.rows, self.shape.cols)));
        }
        let lens =
            [self.detuning.len(), self.drive.len(), self.loss.len(), self.input_weights.len(), self.hopping.len()];
        if lens.iter().any(|&l| l != n) || self.hopping.iter().any(|r| r.len() != n) {
            return Err(invalid("per-mode vectors and hopping matrix must have length n_modes"));
        }
        let mut on_edge = vec![vec![false; n]; n];
        for &(i, j) in &self.edges {
            if i >= n || j >= n || i == j {
                return Err(invalid(format!("bad edge ({i}, {j})")));
            }
            on_edge[i][j] = true;
            on_edge[j][i] = true;
        }
        for i in 0..n {
            for j in 0..n {
                let v = self.hopping[i][j];
                if !v.is_finite() || v != self.hopping[j][i] {
                    return Err(invalid("hopping matrix must be finite and symmetric"));
                }
                if v != 0.0 && !on_edge[i][j] {
                    return Err(invalid(format!("hopping ({i}, {j}) is not on a declared edge")));
                }
            }
        }
        let any_hopping = self.hopping.iter().flatten().any(|&v| v != 0.0);
        if any_hopping {
            let radius = spectral_radius(&self.hopping)?;
            if (radius - 1.0).abs() >= RADIUS_TOLERANCE {
                return Err(invalid(format!("hopping spectral radius is {radius}, expected 1")));
            }
        }
        if !(self.kerr >= 0.0) || !self.kerr.is_finite() {
            return Err(invalid("kerr must be finite and >= 0"));
        }
        if self.loss.iter().any(|&g| !(g > 0.0) || !g.is_finite()) || !(self.source_loss > 0.0) {
            return Err(invalid("all loss rates must be > 0"));
        }
        if self.input_weights.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
            return Err(invalid("input weights must lie in [0, 1]"));
        }
        if self.eta != eta_of(&self.input_weights) {
            return Err(invalid("eta must equal the sum of squared input weights"));
        }
        if self.detuning.iter().any(|d| !d.is_finite())
            || self.drive.iter().any(|f| !f.re.is_finite() || !f.im.is_finite())
        {
            return Err(invalid("detuning and drive must be finite"));
        }
        Ok(())
    }

    /// Hopping partners of each node as `(neighbour, J)`.
    pub fn neighbours(&self) -> Vec<Vec<(usize, f64)>> {
        let mut out = vec![Vec::new(); self.n_modes];
        for &(i, j) in &self.edges {
            let v = self.hopping[i][j];
            if v != 0.0 {
                out[i].push((j, v));
                out[j].push((i, v));
            }
        }
        out
    }
}
