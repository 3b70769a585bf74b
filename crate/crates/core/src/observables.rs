// SPDX-License-Identifier: Apache-2.0

//! Occupation series and the reservoir-computing feature vector
//! `n_i = int <n_i(t)> dt - <n_i^s> dt_window`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::C64;

/// Ensemble-mean occupations per recorded time (rows) and mode (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationSeries {
    pub times: Vec<f64>,
    /// Time at which the source is switched on.
    pub injection_start: f64,
    pub mean_n: Vec<Vec<f64>>,
    pub se_n: Vec<Vec<f64>>,
    pub divergence_fraction: f64,
}

impl OccupationSeries {
    pub fn n_modes(&self) -> usize {
        self.mean_n.first().map_or(0, |r| r.len())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if n == 0 || self.mean_n.len() != n || self.se_n.len() != n {
            return Err(invalid("series rows do not match the time grid"));
        }
        let m = self.n_modes();
        if self.mean_n.iter().chain(&self.se_n).any(|r| r.len() != m) {
            return Err(invalid("series rows have unequal mode counts"));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("series times must be strictly increasing"));
        }
        Ok(())
    }

    /// Indices of recorded times inside `[lo, hi]` (with a small tolerance).
    fn window(&self, lo: f64, hi: f64) -> Result<(usize, usize)> {
        self.validate()?;
        let eps = 1e-9 * hi.abs().max(1.0);
        let first = self.times.partition_point(|&t| t < lo - eps);
        let last = self.times.partition_point(|&t| t <= hi + eps);
        if !(lo <= hi) || first >= last || lo < self.times[0] - eps || hi > self.times[self.times.len() - 1] + eps {
            return Err(invalid("window lies outside the recorded range"));
        }
        Ok((first, last))
    }

    /// Time of the last record.
    pub fn end(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Default steady window: last third of the relaxation phase.
    pub fn steady_window(&self) -> (f64, f64) {
        (self.injection_start * 2.0 / 3.0, self.injection_start)
    }

    /// Default feature window: the whole injection phase.
    pub fn injection_window(&self) -> (f64, f64) {
        (self.injection_start, self.end())
    }
}

/// `Re(alpha alpha~^*)`.
pub fn occupation(alpha: C64, alpha_tilde: C64) -> f64 {
    (alpha * alpha_tilde.conj()).re
}

/// Per-mode arithmetic mean of the records in `window`.
pub fn steady_occupations(series: &OccupationSeries, window: (f64, f64)) -> Result<Vec<f64>> {
    if window.1 > series.injection_start + 1e-9 * series.injection_start.max(1.0) {
        return Err(invalid("steady window must lie inside the relaxation phase"));
    }
    let (a, b) = series.window(window.0, window.1)?;
    let mut out = vec![0.0; series.n_modes()];
    for row in &series.mean_n[a..b] {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let k = (b - a) as f64;
    out.iter_mut().for_each(|o| *o /= k);
    Ok(out)
}

fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; times.len()];
    for k in 1..times.len() {
        let h = 0.5 * (times[k] - times[k - 1]);
        w[k - 1] += h;
        w[k] += h;
    }
    w
}

/// Trapezoid integral of `mean_n - steady` over `window`.
pub fn feature_vector(series: &OccupationSeries, steady: &[f64], window: (f64, f64)) -> Result<Vec<f64>> {
    if steady.len() != series.n_modes() {
        return Err(invalid("steady vector length differs from the mode count"));
    }
    let (a, b) = series.window(window.0, window.1)?;
    let w = trapezoid_weights(&series.times[a..b]);
    let mut out = vec![0.0; steady.len()];
    for (row, wk) in series.mean_n[a..b].iter().zip(&w) {
        for ((o, v), s) in out.iter_mut().zip(row).zip(steady) {
            *o += wk * (v - s);
        }
    }
    Ok(out)
}

/// Conservative standard error of [`feature_vector`]: the trapezoid sum of
/// per-time standard errors (records are strongly correlated in time).
pub fn feature_uncertainty(series: &OccupationSeries, window: (f64, f64)) -> Result<Vec<f64>> {
    let (a, b) = series.window(window.0, window.1)?;
    let w = trapezoid_weights(&series.times[a..b]);
    let mut out = vec![0.0; series.n_modes()];
    for (row, wk) in series.se_n[a..b].iter().zip(&w) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += wk * v;
        }
    }
    Ok(out)
}

/// Features with the default windows.
pub fn default_features(series: &OccupationSeries) -> Result<Vec<f64>> {
    let steady = steady_occupations(series, series.steady_window())?;
    feature_vector(series, &steady, series.injection_window())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(f: impl Fn(f64) -> f64, dt: f64, relax: f64, total: f64) -> OccupationSeries {
        let n = (total / dt).round() as usize;
        let times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
        let mean_n = times.iter().map(|&t| vec![f(t), 2.0 * f(t)]).collect();
        let se_n = times.iter().map(|_| vec![0.0, 0.0]).collect();
        OccupationSeries { times, injection_start: relax, mean_n, se_n, divergence_fraction: 0.0 }
    }

    #[test]
    fn occupation_examples() {
        assert_eq!(occupation(C64::new(2.0, 0.0), C64::new(2.0, 0.0)), 4.0);
        assert_eq!(occupation(C64::new(0.0, 1.0), C64::new(0.0, 1.0)), 1.0);
        assert_eq!(occupation(C64::new(1.0, 1.0), C64::new(1.0, -1.0)), 0.0);
    }

    #[test]
    fn constant_series_gives_zero_features() {
        let s = series(|_| 3.0, 0.05, 15.0, 40.0);
        let f = default_features(&s).unwrap();
        assert_eq!(f, vec![0.0, 0.0]);
    }

    #[test]
    fn exponential_deviation() {
        let s = series(|t| 1.0 + if t >= 15.0 { (-(t - 15.0)).exp() } else { 0.0 }, 0.05, 15.0, 40.0);
        let steady = steady_occupations(&s, (10.0, 14.5)).unwrap();
        assert_eq!(steady, vec![1.0, 2.0]);
        let f = feature_vector(&s, &steady, s.injection_window()).unwrap();
        let want = 1.0 - (-25.0f64).exp();
        // trapezoid error for e^{-t}: h^2/12 * (1 - e^{-25})
        assert!((f[0] - want).abs() < 0.05f64.powi(2) / 12.0 * 1.001);
        assert!((f[1] - 2.0 * want).abs() < 1e-3);
    }

    #[test]
    fn window_checks() {
        let s = series(|t| t, 0.5, 5.0, 10.0);
        assert!(steady_occupations(&s, (4.0, 6.0)).is_err());
        assert!(feature_vector(&s, &[0.0], (5.0, 10.0)).is_err());
        assert!(feature_vector(&s, &[0.0, 0.0], (5.0, 12.0)).is_err());
        let one = steady_occupations(&s, (2.0, 2.0)).unwrap();
        assert_eq!(one, vec![2.0, 4.0]);
    }
}
