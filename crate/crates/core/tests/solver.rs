use std::f64::consts::PI;

use proptest::prelude::*;
use rayon::prelude::*;
use spde_lab::drift::DriftSpec;
use spde_lab::grid::SpaceTimeGrid;
use spde_lab::heat_kernel::{g_squared_time_integral, green_value};
use spde_lab::noise::{Direction, NoiseRealization};
use spde_lab::quadrature::integrate;
use spde_lab::solver::*;
use spde_lab::stats::{shape_stats, variance_with_se};

fn heat_decay_error(nt: usize, nx: usize) -> f64 {
    let g = SpaceTimeGrid::new(1.0, nt, nx).unwrap();
    let f = solve(
        &g,
        &DriftSpec::zero(),
        &InitialCondition::cos_pi(),
        &NoiseRealization::zeros(g),
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..=nx {
        let exact = (-PI * PI).exp() * (PI * g.space(j)).cos();
        worst = worst.max((f.value(nt, j) - exact).abs());
    }
    worst
}

#[test]
fn heat_decay_is_first_order_in_time() {
    let errs: Vec<f64> = [128, 256, 512]
        .iter()
        .map(|&nt| heat_decay_error(nt, 256))
        .collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 0.9, "errors {errs:?}, order {order}");
    }
    assert!(errs[2] < 1e-5);
}

#[test]
fn constant_drift_grows_linearly() {
    let g = SpaceTimeGrid::new(2.0, 100, 10).unwrap();
    let f = solve(
        &g,
        &DriftSpec::constant(-0.4),
        &InitialCondition::zero(),
        &NoiseRealization::zeros(g),
    )
    .unwrap();
    for i in 0..=g.nt() {
        for j in 0..=g.nx() {
            assert!((f.value(i, j) + 0.4 * g.time(i)).abs() < 1e-13);
        }
    }
}

#[test]
fn driftless_variance_matches_kernel_quadrature() {
    let g = SpaceTimeGrid::default_grid();
    let (pi, pj) = g.probe_index(0.5, 0.5).unwrap();
    let vals: Vec<f64> = (0..2000u64)
        .into_par_iter()
        .map(|s| {
            let n = NoiseRealization::sample(g, s);
            solve(&g, &DriftSpec::zero(), &InitialCondition::zero(), &n)
                .unwrap()
                .value(pi, pj)
        })
        .collect();
    let (v, se) = variance_with_se(&vals);
    let want = g_squared_time_integral(0.0, 0.5, 0.5).unwrap().value;
    assert!((v - want).abs() < 3.0 * se, "{v} ± {se} vs {want}");
}

#[test]
fn driftless_field_is_gaussian() {
    let g = SpaceTimeGrid::new(1.0, 128, 32).unwrap();
    let (pi, pj) = g.probe_index(0.75, 0.25).unwrap();
    let vals: Vec<f64> = (0..5000u64)
        .into_par_iter()
        .map(|s| {
            let n = NoiseRealization::sample(g, 10_000 + s);
            solve(&g, &DriftSpec::zero(), &InitialCondition::zero(), &n)
                .unwrap()
                .value(pi, pj)
        })
        .collect();
    let sh = shape_stats(&vals);
    assert!(sh.skewness.abs() < 4.0 * sh.skewness_se, "{sh:?}");
    assert!(sh.excess_kurtosis.abs() < 4.0 * sh.kurtosis_se, "{sh:?}");
}

#[test]
fn neumann_boundary_difference_shrinks_with_dx() {
    let mut prev = f64::INFINITY;
    for nx in [16, 32, 64] {
        let g = SpaceTimeGrid::new(0.5, 4 * nx * nx, nx).unwrap();
        let u0 =
            InitialCondition::new("two modes", |x| (PI * x).cos() + 0.3 * (2.0 * PI * x).cos());
        let f = solve(
            &g,
            &DriftSpec::smooth_sine(1.0),
            &u0,
            &NoiseRealization::zeros(g),
        )
        .unwrap();
        let i = g.nt();
        let left = (f.value(i, 1) - f.value(i, 0)).abs();
        let right = (f.value(i, nx) - f.value(i, nx - 1)).abs();
        let d = left.max(right);
        assert!(d < 2.0 * g.dx(), "nx = {nx}: {d}");
        assert!(d < prev);
        prev = d;
    }
}

/// `∫_0^t ∫_0^1 G(r, x, ξ) h(ξ) dξ dr` for a time-constant `h`.
fn kernel_smoothed(t: f64, x: f64, h: impl Fn(f64) -> f64 + Copy) -> f64 {
    // r = w² removes the approach to the delta at r = 0.
    let inner = |w: f64| {
        let r = w * w;
        if r == 0.0 {
            return 0.0;
        }
        let v = integrate(
            |xi| green_value(r, x, xi).unwrap() * h(xi),
            0.0,
            1.0,
            1e-11,
            1e-11,
        )
        .unwrap()
        .value;
        2.0 * w * v
    };
    integrate(inner, 0.0, t.sqrt(), 1e-9, 1e-9).unwrap().value
}

#[test]
fn linearized_without_feedback_is_kernel_quadrature() {
    let g = SpaceTimeGrid::new(1.0, 1024, 128).unwrap();
    let noise = NoiseRealization::sample(g, 3);
    let base = solve(
        &g,
        &DriftSpec::arctan(1.0, 0.25),
        &InitialCondition::zero(),
        &noise,
    )
    .unwrap();
    let h = Direction::unit_bump(0.4, 0.12, 1.0);
    let v = solve_linearized_with(&base, |_| 0.0, &h).unwrap();
    for (t, x) in [(0.25, 0.375), (0.5, 0.5), (1.0, 0.125)] {
        let want = kernel_smoothed(t, x, |xi| h.eval(0.0, xi));
        let got = v.at_node(t, x).unwrap();
        assert!(
            (got - want).abs() < 2e-3 * want.abs().max(0.05),
            "({t},{x}): {got} vs {want}"
        );
    }
}

#[test]
fn linearized_with_constant_multiplier_matches_duhamel() {
    let g = SpaceTimeGrid::new(1.0, 2048, 64).unwrap();
    let base = solve(
        &g,
        &DriftSpec::zero(),
        &InitialCondition::zero(),
        &NoiseRealization::sample(g, 5),
    )
    .unwrap();
    let h = Direction::with_norm("cos", 1.0 / 2f64.sqrt(), |_, x| (PI * x).cos());
    for lambda in [-1.5, 0.0, 2.0] {
        let v = solve_linearized_with(&base, move |_| lambda, &h).unwrap();
        for (t, x) in [(0.5, 0.25), (1.0, 0.0), (1.0, 0.75)] {
            let k = PI * PI - lambda;
            let want = (PI * x).cos() * (1.0 - (-k * t).exp()) / k;
            let got = v.at_node(t, x).unwrap();
            assert!(
                (got - want).abs() < 5e-3 * want.abs().max(0.01),
                "λ={lambda} ({t},{x}): {got} vs {want}"
            );
        }
    }
}

#[test]
fn linearized_matches_derivative_of_drift() {
    let g = SpaceTimeGrid::new(1.0, 64, 16).unwrap();
    let d = DriftSpec::smooth_sine(0.8);
    let base = solve(
        &g,
        &d,
        &InitialCondition::cos_pi(),
        &NoiseRealization::sample(g, 9),
    )
    .unwrap();
    let h = Direction::unit_bump(0.5, 0.2, 1.0);
    let a = solve_linearized(&base, &h).unwrap();
    let dd = d.clone();
    let b = solve_linearized_with(&base, move |u| dd.derivative(u).unwrap(), &h).unwrap();
    assert_eq!(a.values(), b.values());
}

#[test]
fn csv_export_has_one_row_per_node() {
    let g = SpaceTimeGrid::new(1.0, 4, 3).unwrap();
    let f = solve(
        &g,
        &DriftSpec::step(),
        &InitialCondition::cos_pi(),
        &NoiseRealization::sample(g, 1),
    )
    .unwrap();
    let mut buf = Vec::new();
    f.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data[0], "t,x,u");
    assert_eq!(data.len(), 1 + 5 * 4);
}

fn shifted_sine(name: &str, shift: f64) -> DriftSpec {
    DriftSpec::from_fn(name, 1.0 + shift.abs(), move |u| u.sin() + shift).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn comparison_principle(seed in 0u64..10_000, lo in -1.0f64..0.0, hi in 0.0f64..1.0) {
        let g = SpaceTimeGrid::new(1.0, 64, 16).unwrap();
        let n = NoiseRealization::sample(g, seed);
        let u0 = InitialCondition::cos_pi();
        let a = solve(&g, &shifted_sine("lo", lo), &u0, &n).unwrap();
        let b = solve(&g, &shifted_sine("hi", hi), &u0, &n).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!(*x <= y + 1e-12);
        }
        let s = solve(&g, &DriftSpec::sign(), &u0, &n).unwrap();
        let st = solve(&g, &DriftSpec::step(), &u0, &n).unwrap();
        for (x, y) in s.values().iter().zip(st.values()) {
            prop_assert!(*x <= y + 1e-12);
        }
    }

    #[test]
    fn solve_is_deterministic(seed in any::<u64>()) {
        let g = SpaceTimeGrid::new(1.0, 16, 8).unwrap();
        let n = NoiseRealization::sample(g, seed);
        let a = solve(&g, &DriftSpec::sign(), &InitialCondition::zero(), &n).unwrap();
        let b = solve(&g, &DriftSpec::sign(), &InitialCondition::zero(), &n).unwrap();
        prop_assert_eq!(a.values(), b.values());
        prop_assert_eq!(a.seed(), seed);
    }

    #[test]
    fn linearization_is_linear_in_the_direction(seed in 0u64..1000, a in -3.0f64..3.0) {
        let g = SpaceTimeGrid::new(1.0, 32, 16).unwrap();
        let base = solve(&g, &DriftSpec::arctan(1.0, 0.5), &InitialCondition::zero(), &NoiseRealization::sample(g, seed)).unwrap();
        let h1 = Direction::unit_bump(0.3, 0.1, 1.0);
        let h2 = Direction::with_norm("tx", 0.0, |t, x| t * x);
        let v1 = solve_linearized(&base, &h1).unwrap();
        let v2 = solve_linearized(&base, &h2).unwrap();
        let h1c = h1.clone();
        let combo = Direction::with_norm("combo", 0.0, move |t, x| a * h1c.eval(t, x) + t * x);
        let v = solve_linearized(&base, &combo).unwrap();
        for k in 0..v.values().len() {
            let want = a * v1.values()[k] + v2.values()[k];
            prop_assert!((v.values()[k] - want).abs() < 1e-12 * (1.0 + want.abs()));
        }
    }
}
