//! The named experiments. Each fills a [`Report`] row by row so that a
//! numerical failure still leaves the finished rows in place.

use rayon::prelude::*;
use spde_lab::drift::DriftSpec;
use spde_lab::error::{LabError, Result};
use spde_lab::heat_kernel::{fit_sqrt_band, g_squared_time_integral, log_spaced};
use spde_lab::ladder::{convergence_study, mollify};
use spde_lab::local_time::{
    driftless_process, estimate_fourier, estimate_histogram, moment_study, DEFAULT_N_FREQ,
};
use spde_lab::malliavin::{deriv_feynman_kac, deriv_linearized, deriv_shift_fd};
use spde_lab::noise::NoiseRealization;
use spde_lab::permanent::{
    expand_polynomial, gamma_count, permanent_recursive, permanent_ryser, simplex_integral_beta,
    BaseCase, GapVector, TridiagSystem,
};
use spde_lab::solver::{solve, InitialCondition};
use spde_lab::stats::{shape_stats, variance_with_se, MeanSe};

use crate::config::{Experiment, ResolvedConfig};

/// Tabular output of one run plus summary lines and side files.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub summary: Vec<(String, String)>,
    pub files: Vec<(String, String)>,
}

impl Report {
    fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            ..Default::default()
        }
    }

    fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.to_string(), value.to_string()));
    }
}

fn cells<const N: usize>(values: [&dyn ToString; N]) -> Vec<String> {
    values.iter().map(|v| v.to_string()).collect()
}

/// Keep the rows before the first failed seed and return that failure.
fn take_ordered<T>(
    seeds: &[u64],
    results: Vec<Result<T>>,
    mut push: impl FnMut(u64, T),
) -> Result<()> {
    for (seed, r) in seeds.iter().zip(results) {
        match r {
            Ok(v) => push(*seed, v),
            Err(e) => return Err(LabError::Diagnostic(format!("seed {seed}: {e}"))),
        }
    }
    Ok(())
}

pub fn columns(exp: Experiment) -> &'static [&'static str] {
    match exp {
        Experiment::KernelBand => &["dt_gap", "x", "value", "ratio"],
        Experiment::GaussianVariance => &["seed", "u"],
        Experiment::MalliavinCompare => &[
            "seed",
            "linearized",
            "shift_fd",
            "feynman_kac",
            "feynman_kac_se",
        ],
        Experiment::DerivativeFree => &["seed", "kappa", "derivative"],
        Experiment::LadderConvergence => &["n", "k", "mse", "mse_se", "cauchy", "cauchy_se"],
        Experiment::Localtime => &[
            "seed",
            "mass_histogram",
            "mass_fourier",
            "l2_distance",
            "abs_derivative_integral",
        ],
        Experiment::Moments => &[
            "m",
            "estimate",
            "ci_low",
            "ci_high",
            "bound_shape",
            "constant",
            "usable",
        ],
        Experiment::Permanent => &[
            "m",
            "sigmas",
            "printed",
            "corrected",
            "ryser",
            "gamma",
            "terms",
            "max_coefficient",
        ],
        Experiment::SimplexBeta => &["m", "beta", "t", "estimate", "se", "root"],
    }
}

pub fn run(cfg: &ResolvedConfig, report: &mut Report) -> Result<()> {
    *report = Report::new(columns(cfg.experiment));
    match cfg.experiment {
        Experiment::KernelBand => kernel_band(cfg, report),
        Experiment::GaussianVariance => gaussian_variance(cfg, report),
        Experiment::MalliavinCompare => malliavin_compare(cfg, report),
        Experiment::DerivativeFree => derivative_free(cfg, report),
        Experiment::LadderConvergence => ladder_convergence(cfg, report),
        Experiment::Localtime => localtime(cfg, report),
        Experiment::Moments => moments(cfg, report),
        Experiment::Permanent => permanent(cfg, report),
        Experiment::SimplexBeta => simplex_beta(cfg, report),
    }
}

fn kernel_band(cfg: &ResolvedConfig, rep: &mut Report) -> Result<()> {
    let gaps = log_spaced(1e-4, 1.0, cfg.gaps.unwrap_or(30));
    let band = fit_sqrt_band(&gaps, cfg.positions.as_deref().unwrap_or(&[]))?;
    for r in &band.rows {
        rep.row(cells([&r.dt_gap, &r.x, &r.value, &r.ratio]));
    }
    rep.note("c_lower", band.c_lower);
    rep.note("c_upper", band.c_upper);
    rep.note("band_ratio", band.c_upper / band.c_lower);
    Ok(())
}

fn gaussian_variance(cfg: &ResolvedConfig, rep: &mut Report) -> Result<()> {
    let g = cfg.grid();
    let (t, x) = cfg.probe();
    let (pi, pj) = g.probe_index(t, x)?;
    let seeds = cfg.seeds();
    let results: Vec<Result<f64>> = seeds
        .par_iter()
        .map(|&s| {
            let noise = NoiseRealization::sample(g, s);
            Ok(solve(&g, &DriftSpec::zero(), &InitialCondition::zero(), &noise)?.value(pi, pj))
        })
        .collect();
    let mut vals = Vec::with_capacity(seeds.len());
    take_ordered(&seeds, results, |s, v| {
        rep.row(cells([&s, &v]));
        vals.push(v);
    })?;
    let (var, se) = variance_with_se(&vals);
    let sh = shape_stats(&vals);
    rep.note("variance", var);
    rep.note("variance_se", se);
    rep.note("kernel_variance", g_squared_time_integral(0.0, t, x)?.value);
    rep.note("skewness", sh.skewness);
    rep.note("skewness_se", sh.skewness_se);
    rep.note("excess_kurtosis", sh.excess_kurtosis);
    rep.note("kurtosis_se", sh.kurtosis_se);
    Ok(())
}

fn malliavin_compare(cfg: &ResolvedConfig, rep: &mut Report) -> Result<()> {
    let g = cfg.grid();
    let d = cfg.drift_spec();
    let h = cfg.direction();
    let u0 = cfg.initial_condition();
    let probe = cfg.probe();
    let paths = cfg.paths.unwrap_or(2000);
    let seeds = cfg.seeds();
    let results: Vec<Result<[f64; 4]>> = seeds
        .par_iter()
        .map(|&s| {
            let noise = NoiseRealization::sample(g, s);
            let base = solve(&g, &d, &u0, &noise)?;
            let lin = deriv_linearized(&base, &h, probe)?.value;
            let fd = deriv_shift_fd(&g, &d, &u0, &noise, &h, probe, cfg.eps)?.value;
            let (fk, fk_se) = if d.is_c1() {
                let e = deriv_feynman_kac(&base, &h, probe, paths, None, s)?;
                (e.value, e.std_error)
            } else {
                (f64::NAN, f64::NAN)
            };
            Ok([lin, fd, fk, fk_se])
        })
        .collect();
    let mut rows = Vec::new();
    take_ordered(&seeds, results, |s, v| {
        rep.row(cells([&s, &v[0], &v[1], &v[2], &v[3]]));
        rows.push(v);
    })?;
    let rel: Vec<f64> = rows
        .iter()
        .map(|v| (v[1] - v[0]).abs() / v[0].abs())
        .collect();
    rep.note(
        "max_relative_shift_gap",
        rel.iter().cloned().fold(0.0, f64::max),
    );
    if d.is_c1() {
        let inside = rows
            .iter()
            .filter(|v| (v[2] - v[0]).abs() < 3.0 * v[3])
            .count();
        rep.note("feynman_kac_within_3se", format!("{inside}/{}", rows.len()));
    }
    Ok(())
}

fn derivative_free(cfg: &ResolvedConfig, rep: &mut Report) -> Result<()> {
    let g = cfg.grid();
    let h = cfg.direction();
    let u0 = cfg.initial_condition();
    let probe = cfg.probe();
    let kappas = cfg.kappas.clone().unwrap_or_default();
    let family: Vec<DriftSpec> = kappas
        .iter()
        .map(|&k| mollify(&DriftSpec::sign(), k).map(|m| m.to_spec()))
        .collect::<Result<_>>()?;
    let seeds = cfg.seeds();
    let results: Vec<Result<Vec<f64>>> = seeds
        .par_iter()
        .map(|&s| {
            let noise = NoiseRealization::sample(g, s);
            family
                .iter()
                .map(|d| Ok(deriv_shift_fd(&g, d, &u0, &noise, &h, probe, cfg.eps)?.value))
                .collect()
        })
        .collect();
    let mut squares = vec![Vec::new(); kappas.len()];
    take_ordered(&seeds, results, |s, v| {
        for (k, d) in v.iter().enumerate() {
            rep.row(cells([&s, &kappas[k], d]));
            squares[k].push(d * d);
        }
    })?;
    let scale = probe.0.sqrt() * h.l2_norm().powi(2);
    let means: Vec<MeanSe> = squares.iter().map(|s| MeanSe::from_samples(s)).collect();
    for (k, m) in kappas.iter().zip(&means) {
        rep.note(
            &format!("mean_square_kappa_{k}"),
            format!("{} +- {}", m.mean, m.se),
        );
    }
    let hi = means.iter().map(|m| m.mean).fold(0.0, f64::max);
    let lo = means.iter().map(|m| m.mean).fold(f64::INFINITY, f64::min);
    rep.note("spread", hi / lo);
    rep.note("fitted_constant", 2.0 * means[0].mean / scale);
    Ok(())
}

fn ladder_convergence(cfg: &ResolvedConfig, rep: &mut Report) -> Result<()> {
    let g = cfg.grid();
    let schedule: Vec<(usize, usize)> = cfg
        .schedule
        .clone()
        .unwrap_or_default()
        .iter()
        .map(|p| (p[0], p[1]))
        .collect();
    let tab = convergence_study(
        &cfg.drift_spec(),
        &g,
        &cfg.initial_condition(),
        cfg.probe(),
        &cfg.seeds(),
        &schedule,
    )?;
    for r in &tab.rows {
        let (c, cse) = r
            .cauchy
            .map(|c| (c.mean, c.se))
            .unwrap_or((f64::NAN, f64::NAN));
        rep.row(cells([&r.n, &r.k, &r.mse.mean, &r.mse.se, &c, &cse]));
    }
    rep.note("monotone", tab.monotone);
    rep.note("cauchy_decreasing", tab.cauchy_decreasing);
    Ok(())
}

fn localtime(cfg: &ResolvedConfig, rep: &mut Report) -> Result<()> {
    let g = cfg.grid();
    let curve = cfg.curve();
    let (x, t, bins) = (
        cfg.x.unwrap_or(0.5),
        cfg.t.unwrap_or(1.0),
        cfg.bins.unwrap_or(60),
    );
    let seeds = cfg.seeds();
    let results: Vec<Result<[f64; 4]>> = seeds
        .par_iter()
        .map(|&s| {
            let p = driftless_process(&g, s, x, &curve)?;
            let hist = estimate_histogram(&p, t, bins)?;
            let four = estimate_fourier(&p, t, None, DEFAULT_N_FREQ, &hist.levels)?;
            Ok([
                hist.mass(),
                four.mass(),
                four.relative_l2_distance(&hist)?,
                hist.abs_derivative_integral(),
            ])
        })
        .collect();
    let mut worst: f64 = 0.0;
    take_ordered(&seeds, results, |s, v| {
        rep.row(cells([&s, &v[0], &v[1], &v[2], &v[3]]));
        worst = worst.max(v[2]);
    })?;
    rep.note("max_l2_distance", worst);
    Ok(())
}

fn moments(cfg: &ResolvedConfig, rep: &mut Report) -> Result<()> {
    let tab = moment_study(
        &cfg.grid(),
        cfg.x.unwrap_or(0.5),
        &cfg.curve(),
        cfg.t.unwrap_or(1.0),
        cfg.m_max.unwrap_or(4),
        &cfg.seeds(),
        cfg.bins.unwrap_or(60),
        cfg.bootstrap.unwrap_or(1000),
        0,
    )?;
    for r in &tab.rows[1..] {
        rep.row(cells([
            &r.m,
            &r.estimate,
            &r.ci.0,
            &r.ci.1,
            &r.bound_shape,
            &r.constant,
            &r.usable,
        ]));
    }
    rep.note("fitted_constant", tab.c_fit);
    rep.note("uniform", tab.uniform);
    Ok(())
}

fn permanent(cfg: &ResolvedConfig, rep: &mut Report) -> Result<()> {
    let sigmas = cfg.sigmas.clone().unwrap_or_default();
    let m = sigmas.len();
    let gaps = GapVector::from_sigmas(&sigmas)?;
    let printed = permanent_recursive(&gaps, BaseCase::Printed);
    let corrected = permanent_recursive(&gaps, BaseCase::Permanent);
    let ryser = permanent_ryser(&TridiagSystem::new(&gaps).dense())?;
    let poly = expand_polynomial(m)?;
    let text: Vec<String> = sigmas.iter().map(|s| s.to_string()).collect();
    rep.row(cells([
        &m,
        &text.join(" "),
        &printed,
        &corrected,
        &ryser,
        &gamma_count(m)?,
        &poly.terms.len(),
        &poly.max_coefficient(),
    ]));
    rep.files
        .push((format!("polynomial_m{m}.txt"), poly.to_text()));
    Ok(())
}

fn simplex_beta(cfg: &ResolvedConfig, rep: &mut Report) -> Result<()> {
    let (beta, t, n) = (
        cfg.beta.unwrap_or(0.75),
        cfg.t.unwrap_or(1.0),
        cfg.samples.unwrap_or(200_000),
    );
    let base = cfg.seeds().first().copied().unwrap_or(0);
    for m in 1..=cfg.m_max.unwrap_or(8) {
        let e = simplex_integral_beta(
            m,
            t,
            beta,
            n,
            base.wrapping_add(m as u64),
            None,
            BaseCase::Permanent,
        )?;
        rep.row(cells([&m, &beta, &t, &e.estimate, &e.se, &e.root()]));
    }
    Ok(())
}
