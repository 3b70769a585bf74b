// SPDX-License-Identifier: Apache-2.0

#![allow(clippy::needless_range_loop)]

use pqrc_core::dynamics::{exp_update, step_semi_implicit, NoiseDraw, PhaseState};
use pqrc_core::learn::{
    classification_loss_grad, evaluate_classifier, one_hot, regression_loss_grad, softmax, ClassSplit, ReadoutModel,
    Standardizer,
};
use pqrc_core::model::{build_reservoir, spectral_radius, LatticeShape, ReservoirSpec};
use pqrc_core::sampler::{sample_coherent, sample_squeezed_vacuum, sample_thermal};
use pqrc_core::C64;
use proptest::prelude::*;

fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn logits(m: &ReadoutModel, x: &[f64]) -> Vec<f64> {
    m.weights.iter().zip(&m.bias).map(|(w, b)| b + w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()).collect()
}

/// Mean cross-entropy computed from log-probabilities.
fn ce_reference(m: &ReadoutModel, z: &[Vec<f64>], y: &[usize]) -> f64 {
    z.iter()
        .zip(y)
        .map(|(x, &c)| {
            let l = logits(m, x);
            logsumexp(&l) - l[c]
        })
        .sum::<f64>()
        / z.len() as f64
}

fn mse_reference(m: &ReadoutModel, z: &[Vec<f64>], t: &[C64]) -> f64 {
    z.iter()
        .zip(t)
        .map(|(x, t)| {
            let l = logits(m, x);
            (l[0] - t.re).powi(2) + (l[1] - t.im).powi(2)
        })
        .sum::<f64>()
        / z.len() as f64
}

/// Central differences over `(W row-major, b)`.
fn central_difference(m: &ReadoutModel, h: f64, f: impl Fn(&ReadoutModel) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut probe = m.clone();
    for k in 0..m.weights.len() {
        for i in 0..m.weights[k].len() {
            probe.weights[k][i] = m.weights[k][i] + h;
            let up = f(&probe);
            probe.weights[k][i] = m.weights[k][i] - h;
            let down = f(&probe);
            probe.weights[k][i] = m.weights[k][i];
            out.push((up - down) / (2.0 * h));
        }
    }
    for k in 0..m.bias.len() {
        probe.bias[k] = m.bias[k] + h;
        let up = f(&probe);
        probe.bias[k] = m.bias[k] - h;
        let down = f(&probe);
        probe.bias[k] = m.bias[k];
        out.push((up - down) / (2.0 * h));
    }
    out
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn model_strategy(outputs: usize) -> impl Strategy<Value = (ReadoutModel, Vec<Vec<f64>>)> {
    (2usize..5, 2usize..7).prop_flat_map(move |(m, n)| {
        (
            prop::collection::vec(prop::collection::vec(-2.0f64..2.0, m), outputs),
            prop::collection::vec(-1.0f64..1.0, outputs),
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, m), n),
        )
            .prop_map(move |(weights, bias, z)| {
                (ReadoutModel { weights, bias, standardizer: Standardizer::identity(m) }, z)
            })
    })
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn jacobi_eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mut a = a.to_vec();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn softmax_normalized_and_shift_invariant(v in prop::collection::vec(-30.0f64..30.0, 1..8), c in -50.0f64..50.0) {
        let p = softmax(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_differences((model, z) in model_strategy(3), seed in 0usize..1000) {
        let labels: Vec<usize> = (0..z.len()).map(|i| (i + seed) % 3).collect();
        let y: Vec<Vec<f64>> = labels.iter().map(|&c| one_hot(c, 3)).collect();
        let lg = classification_loss_grad(&model, &z, &y);
        prop_assert!((lg.loss - ce_reference(&model, &z, &labels)).abs() < 1e-12);
        let fd = central_difference(&model, 1e-5, |m| ce_reference(m, &z, &labels));
        prop_assert!(relative_error(&lg.grad, &fd) < 1e-5, "{}", relative_error(&lg.grad, &fd));
    }

    #[test]
    fn squared_error_gradient_matches_differences((model, z) in model_strategy(2), t in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 7)) {
        let targets: Vec<C64> = t.iter().take(z.len()).map(|&(a, b)| C64::new(a, b)).collect();
        let lg = regression_loss_grad(&model, &z, &targets);
        prop_assert!((lg.loss - mse_reference(&model, &z, &targets)).abs() < 1e-12);
        let fd = central_difference(&model, 1e-5, |m| mse_reference(m, &z, &targets));
        prop_assert!(relative_error(&lg.grad, &fd) < 1e-5, "{}", relative_error(&lg.grad, &fd));
    }

    #[test]
    fn confusion_rows_are_count_ratios(labels in prop::collection::vec(0usize..3, 1..40), w in prop::collection::vec(-1.0f64..1.0, 6)) {
        let features: Vec<Vec<f64>> = labels.iter().enumerate().map(|(i, &c)| vec![c as f64 + 0.3 * (i % 3) as f64, (i % 5) as f64]).collect();
        let model = ReadoutModel {
            weights: vec![w[0..2].to_vec(), w[2..4].to_vec(), w[4..6].to_vec()],
            bias: vec![0.0; 3],
            standardizer: Standardizer::identity(2),
        };
        let m = evaluate_classifier(&model, &ClassSplit { features, labels: labels.clone() }, 3).unwrap();
        for c in 0..3 {
            let total = labels.iter().filter(|&&l| l == c).count();
            prop_assert_eq!(m.counts[c].iter().sum::<usize>(), total);
            for k in 0..3 {
                let want = if total == 0 { 0.0 } else { m.counts[c][k] as f64 / total as f64 };
                prop_assert_eq!(m.confusion[c][k], want);
            }
        }
    }

    #[test]
    fn reservoirs_are_normalized_symmetric_and_reproducible(rows in 1usize..4, cols in 1usize..5, seed in any::<u64>()) {
        let shape = LatticeShape::new(rows, cols).unwrap();
        let a = build_reservoir(shape, 0.05, 0.5, seed).unwrap();
        let b = build_reservoir(shape, 0.05, 0.5, seed).unwrap();
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
        let eta: f64 = a.input_weights.iter().map(|w| w * w).sum();
        prop_assert_eq!(a.eta, eta);
        for i in 0..a.n_modes {
            for j in 0..a.n_modes {
                prop_assert_eq!(a.hopping[i][j], a.hopping[j][i]);
                let edge = a.edges.contains(&(i.min(j), i.max(j)));
                if !edge {
                    prop_assert_eq!(a.hopping[i][j], 0.0);
                }
            }
        }
        if a.n_modes >= 2 {
            let ev = jacobi_eigenvalues(&a.hopping);
            let radius = ev.iter().map(|v| v.abs()).fold(0.0, f64::max);
            prop_assert!((radius - 1.0).abs() < 1e-10, "{radius}");
        }
    }

    #[test]
    fn spectral_radius_matches_jacobi(entries in prop::collection::vec(-3.0f64..3.0, 15)) {
        let mut m = vec![vec![0.0; 5]; 5];
        let mut k = 0;
        for i in 0..5 {
            for j in i..5 {
                m[i][j] = entries[k];
                m[j][i] = entries[k];
                k += 1;
            }
        }
        let want = jacobi_eigenvalues(&m).iter().map(|v| v.abs()).fold(0.0, f64::max);
        prop_assert!((spectral_radius(&m).unwrap() - want).abs() < 1e-8);
    }

    #[test]
    fn source_decay_is_exact(re in -3.0f64..3.0, im in -3.0f64..3.0, eta in 0.0f64..4.0, k in 1usize..200) {
        let mut spec = ReservoirSpec::single_mode(0.0, 0.0, 0.0, 1.0);
        spec.input_weights = vec![eta.sqrt()];
        spec.eta = eta;
        let dt = 0.05;
        let s0 = C64::new(re, im);
        let mut state = PhaseState::vacuum(1, s0, s0.conj());
        for _ in 0..k {
            state = step_semi_implicit(&state, &spec, dt, 1.0, &NoiseDraw::zeros(1), 3).unwrap();
        }
        let want = s0 * (-(k as f64) * dt * eta * spec.source_loss / 2.0).exp();
        prop_assert!((state.s - want).norm() <= 1e-13 * s0.norm().max(1e-300) * (k as f64), "{} vs {}", state.s, want);
    }

    #[test]
    fn pure_decay_is_exact(re in -5.0f64..5.0, im in -5.0f64..5.0, loss in 0.1f64..3.0, k in 1usize..300) {
        let spec = ReservoirSpec::single_mode(0.0, 0.0, 0.0, loss);
        let a0 = C64::new(re, im);
        let z = C64::new(0.0, 0.0);
        let mut st = PhaseState { alpha: vec![a0], alpha_tilde: vec![a0], s: z, s_tilde: z };
        for _ in 0..k {
            st = step_semi_implicit(&st, &spec, 0.05, 0.0, &NoiseDraw::zeros(1), 3).unwrap();
        }
        let want = a0 * (-loss * 0.05 * k as f64 / 2.0).exp();
        prop_assert!((st.alpha[0] - want).norm() <= 1e-13 * a0.norm().max(1e-300) * k as f64);
    }

    #[test]
    fn exp_update_solves_linear_ode(er in -2.0f64..0.5, ei in -2.0f64..2.0, rr in -2.0f64..2.0, ri in -2.0f64..2.0, h in 1e-3f64..0.2) {
        // dv/dt = E v + R from v(0) = 0, integrated by fine RK4
        let (e, r) = (C64::new(er, ei), C64::new(rr, ri));
        let n = 2000;
        let dt = h / n as f64;
        let mut v = C64::new(0.0, 0.0);
        for _ in 0..n {
            let f = |v: C64| e * v + r;
            let k1 = f(v);
            let k2 = f(v + k1 * (dt / 2.0));
            let k3 = f(v + k2 * (dt / 2.0));
            let k4 = f(v + k3 * dt);
            v += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }
        prop_assert!((exp_update(C64::new(0.0, 0.0), e, r, h) - v).norm() < 1e-11);
    }

    #[test]
    fn samplers_are_seeded_and_symmetric(seed in any::<u64>(), nbar in 0.0f64..3.0, r in 0.0f64..1.5, theta in -3.0f64..3.0) {
        let t = sample_thermal(nbar, 64, seed).unwrap();
        prop_assert_eq!(&t, &sample_thermal(nbar, 64, seed).unwrap());
        prop_assert!(t.pairs.iter().all(|p| p.alpha == p.alpha_tilde));
        let c = sample_coherent(C64::new(r, theta), 8).unwrap();
        prop_assert!(c.pairs.iter().all(|p| p.alpha == p.alpha_tilde));
        prop_assert_eq!(sample_squeezed_vacuum(r, theta, 64, seed).unwrap(), sample_squeezed_vacuum(r, theta, 64, seed).unwrap());
    }
}
