//! Directional Malliavin derivatives `D^h u(t, x)` of the solution, by three
//! independent routes:
//!
//! * `ShiftFd`: central difference of solves under the Cameron-Martin shift
//!   `W -> W ± eps h`;
//! * `Linearized`: the linear equation `∂_t v = ∂²_x v + b'(u) v + h`;
//! * `FeynmanKac`: the path-integral representation of `v` over reflected
//!   Brownian motion started at `x`.
//!
//! Also the Girsanov density that removes the drift, the second-moment
//! study over a drift family and the series constant of the
//! derivative-free bound.

use libm::lgamma;
use rayon::prelude::*;

use crate::drift::{DriftSpec, Smoothness};
use crate::error::{LabError, Result};
use crate::grid::SpaceTimeGrid;
use crate::noise::{same_grid, CellField, Direction, NoiseRealization};
use crate::reflected::{fill_path, path_steps};
use crate::solver::{solve, solve_linearized, InitialCondition, SolutionField};
use crate::stats::{pairwise_sum, MeanSe};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ShiftFd,
    Linearized,
    FeynmanKac,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::ShiftFd => "shift_fd",
            Method::Linearized => "linearized",
            Method::FeynmanKac => "feynman_kac",
        }
    }
}

/// Estimator settings and diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimateMeta {
    pub eps: Option<f64>,
    /// Difference quotient at `eps / 2`, for the Richardson check.
    pub value_half_eps: Option<f64>,
    pub n_paths: Option<usize>,
    pub seed: Option<u64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeEstimate {
    pub t: f64,
    pub x: f64,
    pub direction: String,
    pub method: Method,
    pub value: f64,
    /// Zero for the deterministic (per noise path) routes.
    pub std_error: f64,
    pub meta: EstimateMeta,
}

/// Default FD step `0.1 / ‖h‖`.
pub fn default_eps(h: &Direction) -> f64 {
    if h.l2_norm() > 0.0 {
        0.1 / h.l2_norm()
    } else {
        0.1
    }
}

#[allow(clippy::too_many_arguments)]
fn fd_quotient(
    grid: &SpaceTimeGrid,
    drift: &DriftSpec,
    u0: &InitialCondition,
    noise: &NoiseRealization,
    h_cells: &CellField,
    eps: f64,
    node: (usize, usize),
) -> Result<(f64, f64, f64)> {
    let plus = solve(grid, drift, u0, &noise.shift_cells(h_cells, eps)?)?.value(node.0, node.1);
    let minus = solve(grid, drift, u0, &noise.shift_cells(h_cells, -eps)?)?.value(node.0, node.1);
    Ok(((plus - minus) / (2.0 * eps), plus, minus))
}

/// Central difference `[u_{+eps} - u_{-eps}] / (2 eps)` at the grid node
/// `probe`, with the quotient at `eps / 2` recorded for a Richardson check.
pub fn deriv_shift_fd(
    grid: &SpaceTimeGrid,
    drift: &DriftSpec,
    u0: &InitialCondition,
    noise: &NoiseRealization,
    h: &Direction,
    probe: (f64, f64),
    eps: Option<f64>,
) -> Result<DerivativeEstimate> {
    same_grid(grid, noise.grid())?;
    let eps = eps.unwrap_or_else(|| default_eps(h));
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(LabError::Domain(format!(
            "FD step must be positive, got {eps}"
        )));
    }
    let node = grid.probe_index(probe.0, probe.1)?;
    let cells = h.cells(grid);
    let (value, plus, minus) = fd_quotient(grid, drift, u0, noise, &cells, eps, node)?;
    let (half, _, _) = fd_quotient(grid, drift, u0, noise, &cells, 0.5 * eps, node)?;
    let mut warnings = Vec::new();
    let scale = plus.abs().max(minus.abs()).max(1.0);
    if (plus - minus).abs() < 1e3 * f64::EPSILON * scale && h.l2_norm() > 0.0 {
        warnings.push(format!(
            "difference {} is at the rounding floor; increase eps",
            plus - minus
        ));
    }
    Ok(DerivativeEstimate {
        t: probe.0,
        x: probe.1,
        direction: h.name().to_string(),
        method: Method::ShiftFd,
        value,
        std_error: 0.0,
        meta: EstimateMeta {
            eps: Some(eps),
            value_half_eps: Some(half),
            seed: Some(noise.seed()),
            warnings,
            ..Default::default()
        },
    })
}

/// Value of the linearized solution at the grid node `probe`.
pub fn deriv_linearized(
    base: &SolutionField,
    h: &Direction,
    probe: (f64, f64),
) -> Result<DerivativeEstimate> {
    let v = solve_linearized(base, h)?;
    Ok(DerivativeEstimate {
        t: probe.0,
        x: probe.1,
        direction: h.name().to_string(),
        method: Method::Linearized,
        value: v.at_node(probe.0, probe.1)?,
        std_error: 0.0,
        meta: EstimateMeta {
            seed: Some(base.seed()),
            ..Default::default()
        },
    })
}

/// Monte Carlo average over reflected paths `ω` from `x` of
/// `∫_0^t h(t-r, ω(r)) exp{∫_0^r b'(u(t-s, ω(s))) ds} dr`, trapezoid rule in
/// time, `u` interpolated bilinearly.
pub fn deriv_feynman_kac(
    base: &SolutionField,
    h: &Direction,
    probe: (f64, f64),
    n_paths: usize,
    dt_path: Option<f64>,
    seed: u64,
) -> Result<DerivativeEstimate> {
    let drift = base.drift();
    if !drift.is_c1() {
        return Err(LabError::Domain(format!(
            "Feynman-Kac route needs a C1 drift, got {}",
            drift.name()
        )));
    }
    if n_paths < 100 {
        return Err(LabError::Domain(format!(
            "Feynman-Kac route needs >= 100 paths, got {n_paths}"
        )));
    }
    let grid = base.grid();
    let (t, x) = probe;
    grid.probe_index(t, x)?;
    let dt_path = dt_path.unwrap_or(grid.dt());
    let mut warnings = Vec::new();
    if dt_path > grid.dt() * (1.0 + 1e-12) {
        warnings.push(format!(
            "path step {dt_path} is coarser than the field step {}",
            grid.dt()
        ));
    }
    let steps = path_steps(t, dt_path);
    let samples: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map_init(
            || vec![0.0; steps + 1],
            |omega, index| {
                fill_path(x, t, seed, index, omega);
                feynman_kac_functional(base, h, t, omega)
            },
        )
        .collect();
    if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
        return Err(LabError::NonFinite {
            value: *bad,
            source_name: "Feynman-Kac functional".into(),
            location: format!("probe ({t}, {x})"),
        });
    }
    let stats = MeanSe::from_samples(&samples);
    Ok(DerivativeEstimate {
        t,
        x,
        direction: h.name().to_string(),
        method: Method::FeynmanKac,
        value: stats.mean,
        std_error: stats.se,
        meta: EstimateMeta {
            n_paths: Some(n_paths),
            seed: Some(seed),
            warnings,
            ..Default::default()
        },
    })
}

fn feynman_kac_functional(base: &SolutionField, h: &Direction, t: f64, omega: &[f64]) -> f64 {
    let steps = omega.len() - 1;
    if steps == 0 {
        return 0.0;
    }
    let drift = base.drift();
    let dr = t / steps as f64;
    let mut exponent = 0.0;
    let mut prev_q = drift
        .derivative(base.interpolate(t, omega[0]))
        .unwrap_or(f64::NAN);
    let mut prev_g = h.eval(t, omega[0]);
    let mut total = 0.0;
    for (k, &w) in omega.iter().enumerate().skip(1) {
        let r = k as f64 * dr;
        let q = drift
            .derivative(base.interpolate(t - r, w))
            .unwrap_or(f64::NAN);
        exponent += 0.5 * (prev_q + q) * dr;
        let g = h.eval(t - r, w) * exponent.exp();
        total += 0.5 * (prev_g + g) * dr;
        prev_q = q;
        prev_g = g;
    }
    total
}

/// Density `Z = exp{-∫∫ b(u) dW - ½ ∫∫ b(u)²}` removing the drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GirsanovWeight {
    pub log_z: f64,
}

impl GirsanovWeight {
    pub fn z(&self) -> f64 {
        self.log_z.exp()
    }
}

/// Discrete Girsanov density for the path `base` driven by `noise`. The
/// integrand on cell `(i, j)` is `b` at the average of the two nodes of row
/// `i`, so it is adapted to the increments.
pub fn girsanov_weight(base: &SolutionField, noise: &NoiseRealization) -> Result<GirsanovWeight> {
    let grid = base.grid();
    same_grid(grid, noise.grid())?;
    let drift = base.drift();
    let (nt, nx) = (grid.nt(), grid.nx());
    let mut beta = Vec::with_capacity(grid.n_cells());
    for i in 0..nt {
        let row = base.row(i);
        for j in 0..nx {
            beta.push(drift.eval(0.5 * (row[j] + row[j + 1])));
        }
    }
    let kernel = CellField::new(*grid, beta)?;
    let stochastic = noise.wiener_integral(&kernel)?;
    let energy = kernel.l2_norm_squared();
    Ok(GirsanovWeight {
        log_z: -stochastic - 0.5 * energy,
    })
}

/// One family member of the second-moment study.
#[derive(Debug, Clone)]
pub struct MomentRow {
    pub drift: String,
    pub lipschitz: Option<f64>,
    /// Monte Carlo `E[(D^h u(t,x))²]`.
    pub mean_square: MeanSe,
}

#[derive(Debug, Clone)]
pub struct SecondMomentTable {
    pub rows: Vec<MomentRow>,
    /// Estimates grow along the family ordered by Lipschitz constant and the
    /// largest exceeds the smallest by more than a factor two.
    pub blow_up: bool,
}

fn lipschitz_of(d: &DriftSpec) -> Option<f64> {
    match d.smoothness() {
        Smoothness::Lipschitz(l) => Some(l),
        Smoothness::C1 => Some(
            (0..=4000)
                .map(|k| d.derivative(-5.0 + 2.5e-3 * k as f64).unwrap_or(0.0).abs())
                .fold(0.0, f64::max),
        ),
        Smoothness::Measurable => None,
    }
}

/// `E[(D^h u(t,x))²]` by the shift estimator for each member of a family of
/// drifts sharing one sup-norm, with common noise across members.
pub fn second_moment_study(
    family: &[DriftSpec],
    grid: &SpaceTimeGrid,
    u0: &InitialCondition,
    h: &Direction,
    probe: (f64, f64),
    seeds: &[u64],
    eps: Option<f64>,
) -> Result<SecondMomentTable> {
    if family.is_empty() {
        return Err(LabError::Domain(
            "second-moment study needs at least one drift".into(),
        ));
    }
    if seeds.len() < 500 {
        return Err(LabError::Domain(format!(
            "second-moment study needs >= 500 seeds, got {}",
            seeds.len()
        )));
    }
    let norm = family[0].sup_norm();
    if let Some(d) = family
        .iter()
        .find(|d| (d.sup_norm() - norm).abs() > 1e-12 * norm.max(1.0))
    {
        return Err(LabError::Domain(format!(
            "family members must share the sup-norm: {} has {} but {} has {}",
            d.name(),
            d.sup_norm(),
            family[0].name(),
            norm
        )));
    }
    let node = grid.probe_index(probe.0, probe.1)?;
    let eps = eps.unwrap_or_else(|| default_eps(h));
    let cells = h.cells(grid);
    let per_seed: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|&seed| {
            let noise = NoiseRealization::sample(*grid, seed);
            family
                .iter()
                .map(|d| fd_quotient(grid, d, u0, &noise, &cells, eps, node).map(|r| r.0 * r.0))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<MomentRow> = family
        .iter()
        .enumerate()
        .map(|(k, d)| {
            let sq: Vec<f64> = per_seed.iter().map(|v| v[k]).collect();
            MomentRow {
                drift: d.name().to_string(),
                lipschitz: lipschitz_of(d),
                mean_square: MeanSe::from_samples(&sq),
            }
        })
        .collect();
    let mut ordered: Vec<&MomentRow> = rows.iter().filter(|r| r.lipschitz.is_some()).collect();
    ordered.sort_by(|a, b| a.lipschitz.partial_cmp(&b.lipschitz).unwrap());
    let blow_up = ordered.len() >= 2
        && ordered
            .windows(2)
            .all(|w| w[1].mean_square.mean > w[0].mean_square.mean)
        && ordered.last().unwrap().mean_square.mean > 2.0 * ordered[0].mean_square.mean;
    Ok(SecondMomentTable { rows, blow_up })
}

/// Partial sum and tail certificate of
/// `Σ_m (4‖b‖)^m C^m √((2m)!) / (m! Γ(m/2+1)^{1/6})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesBound {
    /// Natural log of the partial sum over `m = 0..=trunc`.
    pub ln_partial: f64,
    /// Partial sum (may overflow to infinity even when `ln_partial` is finite).
    pub partial: f64,
    /// Upper bound on the omitted tail.
    pub tail_bound: f64,
    /// Uniform bound on consecutive-term ratios beyond the truncation.
    pub ratio_bound: f64,
    pub trunc: usize,
}

impl SeriesBound {
    pub fn upper(&self) -> f64 {
        self.partial + self.tail_bound
    }
}

fn ln_term(m: usize, ln_a: f64) -> f64 {
    let mf = m as f64;
    let lead = if m == 0 { 0.0 } else { mf * ln_a };
    lead + 0.5 * lgamma(2.0 * mf + 1.0) - lgamma(mf + 1.0) - lgamma(0.5 * mf + 1.0) / 6.0
}

/// `sup_{m ≥ n}` of the consecutive-term ratio divided by `a`:
/// `√(2(2m+1)/(m+1)) < 2` and `Γ(m/2+1)/Γ(m/2+3/2)` decreases in `m`.
fn ratio_envelope(n: usize) -> f64 {
    let z = 0.5 * n as f64 + 1.0;
    2.0 * ((lgamma(z) - lgamma(z + 0.5)) / 6.0).exp()
}

/// Terms `m = 0..n_terms-1` summed in log space.
pub fn series_partial_sum(sup_norm: f64, c_lt: f64, n_terms: usize) -> f64 {
    let a = 4.0 * sup_norm * c_lt;
    if a == 0.0 {
        return 1.0;
    }
    let ln_a = a.ln();
    let logs: Vec<f64> = (0..n_terms).map(|m| ln_term(m, ln_a)).collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    top.exp() * pairwise_sum(&scaled)
}

/// The constant `C̃(‖b‖_∞)` of the derivative-free bound, truncated after
/// `trunc` with a geometric tail certificate.
pub fn bound_constant(sup_norm: f64, c_lt: f64, trunc: usize) -> Result<SeriesBound> {
    if trunc < 10 {
        return Err(LabError::Domain(format!(
            "truncation must be >= 10, got {trunc}"
        )));
    }
    if !(sup_norm >= 0.0) || !(c_lt >= 0.0) || !sup_norm.is_finite() || !c_lt.is_finite() {
        return Err(LabError::Domain(format!(
            "need finite non-negative inputs, got {sup_norm}, {c_lt}"
        )));
    }
    let a = 4.0 * sup_norm * c_lt;
    if a == 0.0 {
        return Ok(SeriesBound {
            ln_partial: 0.0,
            partial: 1.0,
            tail_bound: 0.0,
            ratio_bound: 0.0,
            trunc,
        });
    }
    let ratio_bound = a * ratio_envelope(trunc);
    if ratio_bound >= 1.0 {
        // Smallest truncation at which the envelope certifies convergence.
        let mut hi = trunc.max(1);
        while a * ratio_envelope(hi) >= 1.0 {
            if hi > usize::MAX / 4 {
                break;
            }
            hi *= 2;
        }
        let mut lo = hi / 2;
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if a * ratio_envelope(mid) < 1.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let ln_a = a.ln();
        let growing = (0..trunc).find(|&m| ln_term(m + 1, ln_a) >= ln_term(m, ln_a) && m > 0);
        return Err(LabError::Divergent(format!(
            "ratio bound {ratio_bound:.4} >= 1 at trunc = {trunc}{}; a certificate needs trunc >= {hi}",
            growing.map(|m| format!(", terms still increase at m = {m}")).unwrap_or_default()
        )));
    }
    let ln_a = a.ln();
    let logs: Vec<f64> = (0..=trunc).map(|m| ln_term(m, ln_a)).collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let ln_partial = top + pairwise_sum(&scaled).ln();
    let tail_bound = logs[trunc].exp() * ratio_bound / (1.0 - ratio_bound);
    Ok(SeriesBound {
        ln_partial,
        partial: ln_partial.exp(),
        tail_bound,
        ratio_bound,
        trunc,
    })
}
