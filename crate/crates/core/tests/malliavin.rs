use std::f64::consts::PI;

use proptest::prelude::*;
use rayon::prelude::*;
use spde_lab::drift::DriftSpec;
use spde_lab::error::LabError;
use spde_lab::grid::SpaceTimeGrid;
use spde_lab::heat_kernel::{fit_sqrt_band, g_squared_time_integral, log_spaced};
use spde_lab::ladder::mollify;
use spde_lab::malliavin::*;
use spde_lab::noise::{Direction, NoiseRealization};
use spde_lab::solver::{solve, InitialCondition};
use spde_lab::stats::MeanSe;

fn cos_direction() -> Direction {
    Direction::with_norm("cos", 1.0 / 2f64.sqrt(), |_, x| (PI * x).cos())
}

/// `v(t, x)` for `∂_t v = ∂²_x v + λ v + cos(πx)`, `v(0) = 0`.
fn duhamel_cos(lambda: f64, t: f64, x: f64) -> f64 {
    let k = PI * PI - lambda;
    (PI * x).cos() * (1.0 - (-k * t).exp()) / k
}

#[test]
fn gaussian_case_fd_is_exact_and_matches_kernel() {
    let g = SpaceTimeGrid::new(1.0, 1024, 64).unwrap();
    let noise = NoiseRealization::sample(g, 17);
    let h = cos_direction();
    let u0 = InitialCondition::zero();
    let base = solve(&g, &DriftSpec::zero(), &u0, &noise).unwrap();
    for probe in [(0.5, 0.25), (1.0, 0.0)] {
        let fd = deriv_shift_fd(&g, &DriftSpec::zero(), &u0, &noise, &h, probe, None).unwrap();
        let lin = deriv_linearized(&base, &h, probe).unwrap();
        assert!(
            (fd.value - lin.value).abs() < 1e-9,
            "{} vs {}",
            fd.value,
            lin.value
        );
        assert!((fd.value - fd.meta.value_half_eps.unwrap()).abs() < 1e-9);
        let want = duhamel_cos(0.0, probe.0, probe.1);
        assert!(
            (fd.value - want).abs() < 3e-3 * want.abs().max(0.01),
            "{} vs {want}",
            fd.value
        );
    }
}

#[test]
fn zero_direction_gives_zero_everywhere() {
    let g = SpaceTimeGrid::new(1.0, 64, 16).unwrap();
    let d = DriftSpec::arctan(1.0, 0.25);
    let u0 = InitialCondition::cos_pi();
    let noise = NoiseRealization::sample(g, 2);
    let h = Direction::zero();
    let fd = deriv_shift_fd(&g, &d, &u0, &noise, &h, (0.5, 0.5), None).unwrap();
    assert_eq!(fd.value, 0.0);
    assert!(fd.meta.warnings.is_empty());
    let base = solve(&g, &d, &u0, &noise).unwrap();
    assert_eq!(deriv_linearized(&base, &h, (0.5, 0.5)).unwrap().value, 0.0);
    let fk = deriv_feynman_kac(&base, &h, (0.5, 0.5), 100, None, 1).unwrap();
    assert_eq!((fk.value, fk.std_error), (0.0, 0.0));
}

#[test]
fn feynman_kac_unit_integrand_gives_time() {
    let g = SpaceTimeGrid::new(1.0, 128, 16).unwrap();
    let base = solve(
        &g,
        &DriftSpec::zero(),
        &InitialCondition::zero(),
        &NoiseRealization::sample(g, 4),
    )
    .unwrap();
    let h = Direction::constant(1.0, 1.0);
    for t in [0.25, 0.5, 1.0] {
        let est = deriv_feynman_kac(&base, &h, (t, 0.5), 200, None, 9).unwrap();
        assert!((est.value - t).abs() < 1e-12);
        assert!(est.std_error < 1e-12);
    }
}

#[test]
fn feynman_kac_constant_multiplier_matches_kernel_density() {
    let g = SpaceTimeGrid::new(1.0, 256, 32).unwrap();
    let h = cos_direction();
    for lambda in [-2.0f64, 1.5] {
        // b(u) = λu, evaluated only along u ≡ 0
        let d = DriftSpec::smooth("linear", lambda.abs(), move |u| lambda * u, move |_| lambda)
            .unwrap();
        let base = solve(
            &g,
            &d,
            &InitialCondition::zero(),
            &NoiseRealization::zeros(g),
        )
        .unwrap();
        for (t, x) in [(0.5, 0.25), (1.0, 0.0)] {
            let est = deriv_feynman_kac(&base, &h, (t, x), 20_000, None, 3).unwrap();
            let want = duhamel_cos(lambda, t, x);
            assert!(
                (est.value - want).abs() < 3.0 * est.std_error + 2e-3,
                "λ={lambda}: {est:?} vs {want}"
            );
        }
    }
}

#[test]
fn feynman_kac_rejects_bad_input() {
    let g = SpaceTimeGrid::new(1.0, 64, 16).unwrap();
    let n = NoiseRealization::sample(g, 1);
    let h = Direction::unit_bump(0.5, 0.1, 1.0);
    let smooth = solve(
        &g,
        &DriftSpec::arctan(1.0, 0.5),
        &InitialCondition::zero(),
        &n,
    )
    .unwrap();
    assert!(deriv_feynman_kac(&smooth, &h, (0.5, 0.5), 99, None, 0).is_err());
    let rough = solve(&g, &DriftSpec::sign(), &InitialCondition::zero(), &n).unwrap();
    assert!(deriv_feynman_kac(&rough, &h, (0.5, 0.5), 100, None, 0).is_err());
    assert!(deriv_linearized(&rough, &h, (0.5, 0.5)).is_err());
    let coarse = deriv_feynman_kac(&smooth, &h, (0.5, 0.5), 100, Some(4.0 * g.dt()), 0).unwrap();
    assert_eq!(coarse.meta.warnings.len(), 1);
    assert!(deriv_shift_fd(
        &g,
        &DriftSpec::sign(),
        &InitialCondition::zero(),
        &n,
        &h,
        (0.5, 0.5),
        Some(0.0)
    )
    .is_err());
}

#[test]
fn routes_agree_for_smooth_drift() {
    let g = SpaceTimeGrid::new(1.0, 256, 32).unwrap();
    let d = DriftSpec::arctan(1.0, 0.25);
    let u0 = InitialCondition::zero();
    let h = Direction::unit_bump(0.5, 0.15, 1.0);
    let probe = (0.5, 0.5);
    for seed in 0..3 {
        let noise = NoiseRealization::sample(g, seed);
        let base = solve(&g, &d, &u0, &noise).unwrap();
        let lin = deriv_linearized(&base, &h, probe).unwrap();
        let fd = deriv_shift_fd(&g, &d, &u0, &noise, &h, probe, None).unwrap();
        assert!(
            (fd.value - lin.value).abs() < 0.02 * lin.value.abs(),
            "seed {seed}: {} vs {}",
            fd.value,
            lin.value
        );
        let fk = deriv_feynman_kac(&base, &h, probe, 2000, None, 100 + seed).unwrap();
        assert!(
            (fk.value - lin.value).abs() < 3.0 * fk.std_error,
            "seed {seed}: {fk:?} vs {}",
            lin.value
        );
    }
}

#[test]
fn derivative_is_linear_in_direction() {
    let g = SpaceTimeGrid::new(1.0, 128, 32).unwrap();
    let d = DriftSpec::smooth_sine(1.0);
    let u0 = InitialCondition::zero();
    let noise = NoiseRealization::sample(g, 12);
    let base = solve(&g, &d, &u0, &noise).unwrap();
    let h1 = Direction::unit_bump(0.3, 0.1, 1.0);
    let h2 = cos_direction();
    let a = -1.7;
    let combo = h1.add_scaled(a, &h2, 1.0);
    let probe = (0.75, 0.5);

    let lin = |h: &Direction| deriv_linearized(&base, h, probe).unwrap().value;
    let (l1, l2, l12) = (lin(&h1), lin(&h2), lin(&combo));
    assert!((l12 - (a * l1 + l2)).abs() < 1e-12 * l12.abs().max(1.0));

    let fk = |h: &Direction| {
        deriv_feynman_kac(&base, h, probe, 500, None, 5)
            .unwrap()
            .value
    };
    let (k1, k2, k12) = (fk(&h1), fk(&h2), fk(&combo));
    assert!((k12 - (a * k1 + k2)).abs() < 1e-12 * k12.abs().max(1.0));

    let fd = |h: &Direction| {
        deriv_shift_fd(&g, &d, &u0, &noise, h, probe, Some(1e-3))
            .unwrap()
            .value
    };
    let (f1, f2, f12) = (fd(&h1), fd(&h2), fd(&combo));
    assert!((f12 - (a * f1 + f2)).abs() < 1e-5 * f12.abs().max(1.0));
}

#[test]
fn integration_by_parts_identity() {
    let g = SpaceTimeGrid::new(1.0, 128, 32).unwrap();
    let d = DriftSpec::arctan(1.0, 0.25);
    let u0 = InitialCondition::zero();
    let h = Direction::unit_bump(0.5, 0.15, 1.0);
    let cells = h.cells(&g);
    let probe = (0.5, 0.5);
    let (pi, pj) = g.probe_index(probe.0, probe.1).unwrap();
    let diffs: Vec<f64> = (0..2000u64)
        .into_par_iter()
        .map(|seed| {
            let noise = NoiseRealization::sample(g, seed);
            let u = solve(&g, &d, &u0, &noise).unwrap().value(pi, pj);
            let wh = noise.wiener_integral(&cells).unwrap();
            let fd = deriv_shift_fd(&g, &d, &u0, &noise, &h, probe, None)
                .unwrap()
                .value;
            fd - u * wh
        })
        .collect();
    let m = MeanSe::from_samples(&diffs);
    assert!(m.mean.abs() < 3.0 * m.se, "{m:?}");
}

#[test]
fn girsanov_weight_properties() {
    let g = SpaceTimeGrid::new(1.0, 128, 32).unwrap();
    let u0 = InitialCondition::zero();
    let n = NoiseRealization::sample(g, 0);
    let zero = solve(&g, &DriftSpec::zero(), &u0, &n).unwrap();
    assert_eq!(girsanov_weight(&zero, &n).unwrap().z(), 1.0);

    let d = DriftSpec::arctan(1.0, 0.25);
    let pairs: Vec<(f64, f64)> = (0..4000u64)
        .into_par_iter()
        .map(|seed| {
            let noise = NoiseRealization::sample(g, 7_000 + seed);
            let f = solve(&g, &d, &u0, &noise).unwrap();
            let w = girsanov_weight(&f, &noise).unwrap();
            (w.z(), (-2.0 * w.log_z).exp())
        })
        .collect();
    let z: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let inv2: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    assert!(z.iter().all(|&v| v > 0.0));
    let mz = MeanSe::from_samples(&z);
    assert!((mz.mean - 1.0).abs() < 3.0 * mz.se, "{mz:?}");
    let mi = MeanSe::from_samples(&inv2);
    assert!(mi.mean.is_finite());
    assert!(mi.mean <= (3.0f64).exp() + 3.0 * mi.se, "{mi:?}");
}

#[test]
fn gaussian_second_moment_sits_under_band_bound() {
    let g = SpaceTimeGrid::new(1.0, 256, 32).unwrap();
    let h = Direction::unit_bump(0.5, 0.15, 1.0);
    let seeds: Vec<u64> = (0..500).collect();
    let probe = (0.5, 0.5);
    let tab = second_moment_study(
        &[DriftSpec::zero()],
        &g,
        &InitialCondition::zero(),
        &h,
        probe,
        &seeds,
        None,
    )
    .unwrap();
    let est = tab.rows[0].mean_square.mean;
    // deterministic in the Gaussian case
    assert!(tab.rows[0].mean_square.se < 1e-12 * est);
    let gsq = g_squared_time_integral(0.0, probe.0, probe.1)
        .unwrap()
        .value;
    assert!(est <= gsq * h.l2_norm().powi(2));
    let band = fit_sqrt_band(&log_spaced(1e-4, 1.0, 30), &[0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
    assert!(est <= band.c_upper * probe.0.sqrt() * h.l2_norm().powi(2));
}

#[test]
fn doubling_the_direction_quadruples_the_moment() {
    let g = SpaceTimeGrid::new(1.0, 128, 32).unwrap();
    let h = Direction::unit_bump(0.5, 0.15, 1.0);
    let seeds: Vec<u64> = (0..500).collect();
    let fam = [mollify(&DriftSpec::sign(), 10).unwrap().to_spec()];
    let u0 = InitialCondition::zero();
    let one = second_moment_study(&fam, &g, &u0, &h, (0.5, 0.5), &seeds, None).unwrap();
    let two = second_moment_study(&fam, &g, &u0, &h.scaled(2.0), (0.5, 0.5), &seeds, None).unwrap();
    let (a, b) = (one.rows[0].mean_square, two.rows[0].mean_square);
    assert!(
        (b.mean - 4.0 * a.mean).abs() < 2.0 * b.se.hypot(4.0 * a.se),
        "{a:?} {b:?}"
    );
}

#[test]
fn second_moment_study_checks_inputs() {
    let g = SpaceTimeGrid::new(1.0, 16, 8).unwrap();
    let h = Direction::unit_bump(0.5, 0.15, 1.0);
    let u0 = InitialCondition::zero();
    let seeds: Vec<u64> = (0..500).collect();
    let fam = [DriftSpec::sign(), DriftSpec::arctan(2.0, 1.0)];
    assert!(matches!(
        second_moment_study(&fam, &g, &u0, &h, (0.5, 0.5), &seeds, None),
        Err(LabError::Domain(_))
    ));
    assert!(second_moment_study(
        &[DriftSpec::sign()],
        &g,
        &u0,
        &h,
        (0.5, 0.5),
        &seeds[..499],
        None
    )
    .is_err());
    assert!(second_moment_study(&[], &g, &u0, &h, (0.5, 0.5), &seeds, None).is_err());
}

fn ln_term_oracle(m: usize, a: f64) -> f64 {
    let m = m as f64;
    m * a.ln() + 0.5 * libm::lgamma(2.0 * m + 1.0)
        - libm::lgamma(m + 1.0)
        - libm::lgamma(m / 2.0 + 1.0) / 6.0
}

#[test]
fn series_matches_high_precision_summation() {
    let s = series_partial_sum(1.0, 1.0, 200);
    let want = 8.756_233_952_299_946e152;
    assert!((s - want).abs() < 1e-10 * want, "{s:e}");
    assert_eq!(series_partial_sum(0.0, 5.0, 200), 1.0);
}

#[test]
fn certified_constant_brackets_the_series() {
    let b = bound_constant(0.05, 1.0, 200).unwrap();
    let truth = 1.438_977_973_772_176_3;
    assert!(b.partial <= truth * (1.0 + 1e-14));
    assert!(b.upper() >= truth * (1.0 - 1e-14));
    assert!((b.partial - truth).abs() < 1e-10 * truth);
    assert!(b.ratio_bound < 1.0);
    assert_eq!(bound_constant(0.0, 1.0, 10).unwrap().partial, 1.0);
}

#[test]
fn uncertifiable_constant_is_reported() {
    match bound_constant(1.0, 1.0, 200) {
        Err(LabError::Divergent(msg)) => assert!(msg.contains("trunc")),
        other => panic!("expected a divergence report, got {other:?}"),
    }
    assert!(bound_constant(1.0, 1.0, 9).is_err());
}

#[test]
fn term_ratios_decay() {
    let a = 4.0;
    let ratio = |m: usize| (ln_term_oracle(m + 1, a) - ln_term_oracle(m, a)).exp();
    let probes = [10usize, 100, 1_000, 100_000, 10_000_000];
    for w in probes.windows(2) {
        assert!(ratio(w[1]) < ratio(w[0]));
    }
    assert!(ratio(10_000_000) < 0.6 * ratio(10));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn linearized_scales_with_direction(seed in 0u64..500, s in -4.0f64..4.0) {
        let g = SpaceTimeGrid::new(1.0, 32, 16).unwrap();
        let base = solve(&g, &DriftSpec::arctan(1.0, 0.3), &InitialCondition::zero(), &NoiseRealization::sample(g, seed)).unwrap();
        let h = Direction::unit_bump(0.5, 0.2, 1.0);
        let a = deriv_linearized(&base, &h, (1.0, 0.5)).unwrap().value;
        let b = deriv_linearized(&base, &h.scaled(s), (1.0, 0.5)).unwrap().value;
        prop_assert!((b - s * a).abs() < 1e-12 * (1.0 + b.abs()));
    }

    #[test]
    fn girsanov_weight_is_positive_and_finite(seed in any::<u64>(), amp in 0.0f64..2.0) {
        let g = SpaceTimeGrid::new(1.0, 32, 8).unwrap();
        let n = NoiseRealization::sample(g, seed);
        let f = solve(&g, &DriftSpec::arctan(amp, 0.5), &InitialCondition::zero(), &n).unwrap();
        let w = girsanov_weight(&f, &n).unwrap();
        prop_assert!(w.log_z.is_finite());
        prop_assert!(w.z() > 0.0);
    }

    #[test]
    fn estimates_are_finite(seed in 0u64..200) {
        let g = SpaceTimeGrid::new(1.0, 32, 8).unwrap();
        let n = NoiseRealization::sample(g, seed);
        let h = Direction::unit_bump(0.5, 0.2, 1.0);
        let e = deriv_shift_fd(&g, &DriftSpec::sign(), &InitialCondition::zero(), &n, &h, (0.5, 0.5), None).unwrap();
        prop_assert!(e.value.is_finite());
        prop_assert!(e.std_error >= 0.0);
        prop_assert_eq!(e.method.as_str(), "shift_fd");
    }
}
