// SPDX-License-Identifier: Apache-2.0

use pqrc_core::dynamics::{evolve_trajectory, run_ensemble, IntegratorConfig, PhaseState, Schedule};
use pqrc_core::learn::dataset::ParameterRanges;
use pqrc_core::model::ReservoirSpec;
use pqrc_core::oracle::{build_state_fock, evolve_master, expect_occupation, FockDensityMatrix, MasterConfig};
use pqrc_core::rng::{stream, Purpose};
use pqrc_core::sampler::{
    estimate_moment, sample_cat, sample_coherent, sample_squeezed_vacuum, sample_state, sample_thermal, GridSpec,
    StateSpec,
};
use pqrc_core::C64;

fn single(kerr: f64, drive: f64) -> ReservoirSpec {
    ReservoirSpec::single_mode(0.0, kerr, drive, 1.0).with_input_weights(vec![1.0])
}

fn relax_only(t: f64, stride: usize) -> Schedule {
    Schedule { t_relax: t, t_final: 0.0, dt: 0.05, record_stride: stride }
}

#[test]
fn linear_mode_follows_the_analytic_solution() {
    let spec = single(0.0, 1.0);
    let z = C64::new(0.0, 0.0);
    let run = evolve_trajectory(
        &PhaseState::vacuum(1, z, z),
        &spec,
        &relax_only(25.0, 1),
        &IntegratorConfig::default(),
        1,
        0,
    )
    .unwrap();
    for (t, s) in run.times.iter().zip(&run.states) {
        let want = C64::new(0.0, -2.0) * (1.0 - (-t / 2.0).exp());
        assert!((s.alpha[0] - want).norm() < 1e-6, "t = {t}");
        assert!((s.alpha_tilde[0] - want).norm() < 1e-6);
    }
    let n = run.states.last().unwrap().alpha[0].norm_sqr();
    assert!((n - 4.0).abs() < 1e-4);
}

#[test]
fn linear_ensembles_are_deterministic() {
    let spec = single(0.0, 0.7);
    let schedule = Schedule { t_relax: 5.0, t_final: 5.0, dt: 0.05, record_stride: 5 };
    let src = sample_coherent(C64::new(0.8, 0.3), 300).unwrap();
    let a = run_ensemble(&spec, &src, &schedule, &IntegratorConfig::default(), 1).unwrap();
    let b = run_ensemble(&spec, &src, &schedule, &IntegratorConfig::default(), 2).unwrap();
    assert_eq!(a.series, b.series);
    assert!(a.series.se_n.iter().flatten().all(|&s| s == 0.0));
    assert_eq!(a.series.divergence_fraction, 0.0);
}

#[test]
fn halving_the_step_stays_within_noise() {
    let spec = single(0.1, 1.0);
    let config = IntegratorConfig::default();
    let src = sample_coherent(C64::new(0.0, 0.0), 10_000).unwrap();
    let coarse = run_ensemble(&spec, &src, &Schedule { dt: 0.05, ..relax_only(10.0, 20) }, &config, 3).unwrap();
    let fine = run_ensemble(&spec, &src, &Schedule { dt: 0.025, ..relax_only(10.0, 40) }, &config, 4).unwrap();
    assert_eq!(coarse.series.times, fine.series.times);
    for k in 0..coarse.series.times.len() {
        let (a, b) = (coarse.series.mean_n[k][0], fine.series.mean_n[k][0]);
        let se = coarse.series.se_n[k][0].hypot(fine.series.se_n[k][0]);
        assert!(
            (a - b).abs() <= 3.0 * se || (a - b).abs() < 1e-12,
            "t = {}: {a} vs {b} (se {se})",
            coarse.series.times[k]
        );
        // ten correlated records per run, so a wider band
        let (im, ise) = (coarse.imag_mean[k][0], coarse.imag_se[k][0]);
        assert!(im.abs() <= 4.0 * ise || im.abs() < 1e-12, "Im = {im} (se {ise})");
    }
}

#[test]
fn linear_cascade_agrees_with_the_master_equation() {
    let spec = single(0.0, 0.3);
    let beta = C64::new(0.5, -0.2);
    // the midpoint step is second order in the decaying source, so a fine step
    let schedule = Schedule { t_relax: 10.0, t_final: 10.0, dt: 0.0125, record_stride: 8 };
    let ppm =
        run_ensemble(&spec, &sample_coherent(beta, 1).unwrap(), &schedule, &IntegratorConfig::default(), 0).unwrap();
    let src = build_state_fock(&StateSpec::Coherent { beta }, 12).unwrap();
    let exact =
        evolve_master(&FockDensityMatrix::vacuum(&[20]), &spec, Some(&src), &schedule, &MasterConfig::default())
            .unwrap();
    let worst =
        ppm.series.mean_n.iter().zip(&exact.series.mean_n).map(|(a, b)| (a[0] - b[0]).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst}");
    assert!(exact.max_top_level_population < 1e-10);
}

#[test]
fn thermal_and_squeezed_occupations() {
    let n = estimate_moment(&sample_thermal(2.0, 100_000, 5).unwrap(), 1, 1).unwrap();
    assert!((n.mean.re - 2.0).abs() < 3.0 * n.se_re, "{n:?}");
    for (k, r) in [0.5f64, 0.9, 1.1].into_iter().enumerate() {
        let s = sample_squeezed_vacuum(r, 0.3, 100_000, 10 + k as u64).unwrap();
        let n = estimate_moment(&s, 1, 1).unwrap();
        assert!((n.mean.re - r.sinh().powi(2)).abs() < 3.0 * n.se_re, "r = {r}: {n:?}");
    }
    let s = sample_squeezed_vacuum(1.0, 0.0, 100_000, 20).unwrap();
    let m = estimate_moment(&s, 2, 0).unwrap();
    let want = -1f64.sinh() * 1f64.cosh();
    assert!((m.mean.re - want).abs() < 3.0 * m.se_re, "{m:?}");
}

#[test]
fn sampled_occupations_are_real_within_noise() {
    let ranges = ParameterRanges::default();
    let mut rng = stream(77, Purpose::StateParams, 0);
    for class in 0..3 {
        for k in 0..3 {
            let state = ranges.draw(class, &mut rng);
            let s = sample_state(&state, 10_000, 100 + 3 * class as u64 + k, None).unwrap();
            let n = estimate_moment(&s, 1, 1).unwrap();
            assert!(n.mean.im.abs() <= 3.0 * n.se_im || n.mean.im.abs() < 1e-12, "{state:?}: {n:?}");
        }
    }
}

#[test]
fn cat_samples_are_bimodal_and_match_the_fock_state() {
    let beta = C64::new(2.0, 0.0);
    let s = sample_cat(beta, 0.0, 20_000, &GridSpec::for_cat(beta), 8).unwrap();
    let near = |c: f64| s.pairs.iter().filter(|p| (p.alpha.re - c).abs() < 0.5).count();
    assert!(near(2.0) > 2 * near(0.0) && near(-2.0) > 2 * near(0.0));
    let right = s.pairs.iter().filter(|p| p.alpha.re > 0.0).count() as f64 / s.len() as f64;
    assert!((right - 0.5).abs() < 0.03, "{right}");

    let spec = StateSpec::Cat { beta: C64::new(1.2, 0.0), phase: 0.0 };
    let s = sample_state(&spec, 100_000, 9, None).unwrap();
    let n = estimate_moment(&s, 1, 1).unwrap();
    let exact = expect_occupation(&build_state_fock(&spec, 40).unwrap(), 0).unwrap();
    assert!((n.mean.re - exact).abs() < 3.0 * n.se_re, "{} vs {exact} (se {})", n.mean.re, n.se_re);
}
