// SPDX-License-Identifier: Apache-2.0

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

// Unused when std is linked (tests), which provides the inherent methods.
#[allow(unused_imports)]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use super::FockDensityMatrix;
use crate::error::{invalid, Result};
use crate::C64;

/// Wigner function sampled on a `(q, p)` grid, `values[i][j] = W(q_i, p_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerGrid {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// Trapezoid integral of `W` over the grid.
    pub normalization: f64,
    /// Set when the normalization is off by more than 1%.
    pub warning: bool,
}

fn weights(x: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; x.len()];
    for k in 1..x.len() {
        let h = 0.5 * (x[k] - x[k - 1]);
        w[k - 1] += h;
        w[k] += h;
    }
    w
}

/// `W(q, p) = (1/pi) sum_{nm} rho_nm (-1)^n <m|D(2a)|n>`, `a = (q + ip)/sqrt 2`,
/// so the vacuum is `e^{-q^2-p^2}/pi`.
///
/// The columns `D(z)|n>` are built by `D|n> = (b^dag - z^*) D|n-1> / sqrt n`
/// from the coherent state `D|0>`, which is exact inside the truncation.
pub fn wigner_grid(rho: &FockDensityMatrix, q_grid: &[f64], p_grid: &[f64]) -> Result<WignerGrid> {
    if rho.dims().len() != 1 {
        return Err(invalid("Wigner grid needs a single-mode density matrix"));
    }
    let strictly_increasing =
        |x: &[f64]| x.len() >= 2 && x.windows(2).all(|w| w[1] > w[0]) && x.iter().all(|v| v.is_finite());
    if !strictly_increasing(q_grid) || !strictly_increasing(p_grid) {
        return Err(invalid("q and p grids need >= 2 strictly increasing finite points"));
    }
    let d = rho.dim();
    let mut cols = vec![C64::new(0.0, 0.0); d * d];
    let mut values = Vec::with_capacity(q_grid.len());
    for &q in q_grid {
        let mut row = Vec::with_capacity(p_grid.len());
        for &p in p_grid {
            let z = C64::new(q, p) * 2f64.sqrt();
            // column n occupies cols[n*d .. (n+1)*d]
            let mut c = C64::new((-0.5 * z.norm_sqr()).exp(), 0.0);
            for m in 0..d {
                if m > 0 {
                    c = c * z / (m as f64).sqrt();
                }
                cols[m] = c;
            }
            for n in 1..d {
                let s = 1.0 / (n as f64).sqrt();
                for m in 0..d {
                    let up = if m > 0 { cols[(n - 1) * d + m - 1] * (m as f64).sqrt() } else { C64::new(0.0, 0.0) };
                    cols[n * d + m] = (up - z.conj() * cols[(n - 1) * d + m]) * s;
                }
            }
            let mut w = C64::new(0.0, 0.0);
            for n in 0..d {
                let mut acc = C64::new(0.0, 0.0);
                for m in 0..d {
                    acc += rho.get(n, m) * cols[n * d + m];
                }
                w += if n % 2 == 0 { acc } else { -acc };
            }
            row.push(w.re / PI);
        }
        values.push(row);
    }
    let (wq, wp) = (weights(q_grid), weights(p_grid));
    let normalization: f64 =
        values.iter().zip(&wq).map(|(row, a)| a * row.iter().zip(&wp).map(|(v, b)| v * b).sum::<f64>()).sum();
    Ok(WignerGrid {
        q: q_grid.to_vec(),
        p: p_grid.to_vec(),
        values,
        normalization,
        warning: (normalization - 1.0).abs() > 0.01,
    })
}
