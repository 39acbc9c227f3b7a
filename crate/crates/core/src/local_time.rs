//! Local times of `X_t = u(t, x + ω(t))` for the driftless field: histogram
//! and Fourier estimators, the increment-variance and local
//! non-determinism checks, and moments of `∫ |∂_y L(t, y)| dy`.

use std::sync::Arc;

use libm::lgamma;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::drift::DriftSpec;
use crate::error::{ensure_finite, LabError, Result};
use crate::grid::SpaceTimeGrid;
use crate::heat_kernel::{covariance, covariance_matrix, g_squared_time_integral};
use crate::noise::NoiseRealization;
use crate::solver::{solve, InitialCondition, SolutionField};
use crate::stats::{bootstrap_ci, linear_fit, mean, pairwise_sum, MeanSe};

/// A curve `ω: [0, T] → ℝ` shifting the spatial argument.
#[derive(Clone)]
pub struct Curve {
    name: String,
    func: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    lipschitz: f64,
}

impl std::fmt::Debug for Curve {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Curve")
            .field("name", &self.name)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl Curve {
    pub fn new(
        name: impl Into<String>,
        lipschitz: f64,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            func: Arc::new(f),
            lipschitz,
        }
    }

    pub fn zero() -> Self {
        Self::new("zero", 0.0, |_| 0.0)
    }

    /// `amplitude · sin(2π s)`.
    pub fn sine(amplitude: f64) -> Self {
        Self::new(
            format!("sine({amplitude})"),
            2.0 * std::f64::consts::PI * amplitude.abs(),
            move |s| amplitude * (2.0 * std::f64::consts::PI * s).sin(),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn eval(&self, s: f64) -> f64 {
        (self.func)(s)
    }
}

/// Samples `X(s_k)` on the time grid, joined linearly between samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveProcess {
    pub anchor: f64,
    pub curve: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl CurveProcess {
    /// `X(s_i) = u(s_i, x + ω(s_i))`, linear interpolation in space.
    pub fn from_field(field: &SolutionField, x: f64, curve: &Curve) -> Result<Self> {
        if field.drift().sup_norm() != 0.0 {
            return Err(LabError::Domain(format!(
                "local-time processes are built on the driftless field, got drift {}",
                field.drift().name()
            )));
        }
        let grid = field.grid();
        let mut times = Vec::with_capacity(grid.nt() + 1);
        let mut values = Vec::with_capacity(grid.nt() + 1);
        for i in 0..=grid.nt() {
            let s = grid.time(i);
            let pos = x + curve.eval(s);
            if !(-1e-12..=1.0 + 1e-12).contains(&pos) {
                return Err(LabError::Domain(format!(
                    "x + ω(s) = {pos} leaves [0, 1] at s = {s} for curve {}",
                    curve.name()
                )));
            }
            times.push(s);
            values.push(field.interpolate(s, pos.clamp(0.0, 1.0)));
        }
        Ok(Self {
            anchor: x,
            curve: curve.name().to_string(),
            times,
            values,
        })
    }

    /// A given path, for synthetic checks.
    pub fn synthetic(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.len() < 2 {
            return Err(LabError::Domain(
                "synthetic path needs >= 2 matching samples".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(LabError::Domain("synthetic times must increase".into()));
        }
        for v in &values {
            ensure_finite("path value", *v)?;
        }
        Ok(Self {
            anchor: f64::NAN,
            curve: "synthetic".into(),
            times,
            values,
        })
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Linear segments `(duration, start, end)` covering `[times[0], t]`.
    pub fn segments(&self, t: f64) -> Result<Vec<(f64, f64, f64)>> {
        if t > self.horizon() * (1.0 + 1e-12) || t <= self.times[0] {
            return Err(LabError::Domain(format!(
                "horizon {t} outside ({}, {}]",
                self.times[0],
                self.horizon()
            )));
        }
        let mut segs = Vec::new();
        for k in 0..self.times.len() - 1 {
            let (s0, s1) = (self.times[k], self.times[k + 1]);
            if s0 >= t {
                break;
            }
            let (a, mut b) = (self.values[k], self.values[k + 1]);
            let end = s1.min(t);
            if end < s1 {
                b = a + (b - a) * (end - s0) / (s1 - s0);
            }
            segs.push((end - s0, a, b));
        }
        Ok(segs)
    }

    /// `∫_0^t f(X_s) ds` along the linear segments, 4-point Gauss-Legendre
    /// on each.
    pub fn occupation_integral(&self, t: f64, f: impl Fn(f64) -> f64) -> Result<f64> {
        const NODES: [f64; 4] = [
            -0.861_136_311_594_052_6,
            -0.339_981_043_584_856_3,
            0.339_981_043_584_856_3,
            0.861_136_311_594_052_6,
        ];
        const WEIGHTS: [f64; 4] = [
            0.347_854_845_137_453_9,
            0.652_145_154_862_546_1,
            0.652_145_154_862_546_1,
            0.347_854_845_137_453_9,
        ];
        let terms: Vec<f64> = self
            .segments(t)?
            .iter()
            .map(|&(d, a, b)| {
                let q: f64 = NODES
                    .iter()
                    .zip(WEIGHTS)
                    .map(|(z, w)| w * f(a + 0.5 * (1.0 + z) * (b - a)))
                    .sum();
                0.5 * d * q
            })
            .collect();
        Ok(pairwise_sum(&terms))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    Histogram { n_bins: usize },
    Fourier { u_cutoff: f64, n_freq: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalTimeEstimate {
    pub t: f64,
    /// Equally spaced levels.
    pub levels: Vec<f64>,
    pub dy: f64,
    pub local_time: Vec<f64>,
    pub derivative: Vec<f64>,
    pub estimator: Estimator,
    pub warnings: Vec<String>,
}

impl LocalTimeEstimate {
    pub fn mass(&self) -> f64 {
        pairwise_sum(&self.local_time) * self.dy
    }

    /// `Σ_j f(y_j) L(t, y_j) Δy`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        let terms: Vec<f64> = self
            .levels
            .iter()
            .zip(&self.local_time)
            .map(|(&y, &l)| f(y) * l)
            .collect();
        pairwise_sum(&terms) * self.dy
    }

    /// `Σ_j |∂_y L(t, y_j)| Δy`.
    pub fn abs_derivative_integral(&self) -> f64 {
        let terms: Vec<f64> = self.derivative.iter().map(|d| d.abs()).collect();
        pairwise_sum(&terms) * self.dy
    }

    pub fn l2_norm(&self) -> f64 {
        let sq: Vec<f64> = self.local_time.iter().map(|l| l * l).collect();
        (pairwise_sum(&sq) * self.dy).sqrt()
    }

    /// `‖self - other‖_{L²} / ‖other‖_{L²}` on shared levels.
    pub fn relative_l2_distance(&self, other: &LocalTimeEstimate) -> Result<f64> {
        if self.levels.len() != other.levels.len()
            || self
                .levels
                .iter()
                .zip(&other.levels)
                .any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + a.abs()))
        {
            return Err(LabError::GridMismatch(
                "local-time estimates use different levels".into(),
            ));
        }
        let sq: Vec<f64> = self
            .local_time
            .iter()
            .zip(&other.local_time)
            .map(|(a, b)| (a - b) * (a - b))
            .collect();
        Ok((pairwise_sum(&sq) * self.dy).sqrt() / other.l2_norm())
    }
}

pub const DEFAULT_BINS: usize = 60;
/// Extra empty bins on each side so the smoothed derivative sees the edges.
pub const HISTOGRAM_PAD: usize = 8;
/// Gaussian smoothing bandwidth for `∂_y L`, in bins.
pub const SMOOTHING_BINS: f64 = 2.0;

fn smoothed_derivative(values: &[f64], dy: f64) -> Vec<f64> {
    let n = values.len();
    let half = (4.0 * SMOOTHING_BINS).ceil() as isize;
    let kernel: Vec<f64> = (-half..=half)
        .map(|k| (-0.5 * (k as f64 / SMOOTHING_BINS).powi(2)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let smooth: Vec<f64> = (0..n as isize)
        .map(|j| {
            (-half..=half)
                .filter_map(|k| {
                    let idx = j + k;
                    (idx >= 0 && idx < n as isize)
                        .then(|| kernel[(k + half) as usize] * values[idx as usize])
                })
                .sum::<f64>()
                / norm
        })
        .collect();
    (0..n)
        .map(|j| {
            let lo = if j == 0 { 0.0 } else { smooth[j - 1] };
            let hi = if j + 1 == n { 0.0 } else { smooth[j + 1] };
            (hi - lo) / (2.0 * dy)
        })
        .collect()
}

/// Levels `y_j` and bin width covering the path range with `n_bins` bins
/// plus padding.
pub fn histogram_levels(
    proc: &CurveProcess,
    t: f64,
    n_bins: usize,
) -> Result<(Vec<f64>, f64, Vec<String>)> {
    let segs = proc.segments(t)?;
    let (lo, hi) = segs.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY),
        |(lo, hi), &(_, a, b)| (lo.min(a).min(b), hi.max(a).max(b)),
    );
    let mut warnings = Vec::new();
    let (lo, width) = if hi - lo <= 1e-12 * (1.0 + lo.abs()) {
        warnings.push(format!(
            "path is constant at {lo}; occupation sits in a single bin"
        ));
        let width = 1.0 / n_bins as f64;
        (lo - 0.5 * width, width)
    } else {
        (lo, (hi - lo) / n_bins as f64)
    };
    let total = n_bins + 2 * HISTOGRAM_PAD;
    let start = lo - HISTOGRAM_PAD as f64 * width;
    Ok((
        (0..total)
            .map(|j| start + (j as f64 + 0.5) * width)
            .collect(),
        width,
        warnings,
    ))
}

/// Exact occupation of the piecewise-linear path per bin over bin width.
pub fn estimate_histogram(proc: &CurveProcess, t: f64, n_bins: usize) -> Result<LocalTimeEstimate> {
    if n_bins < 10 {
        return Err(LabError::Domain(format!("need >= 10 bins, got {n_bins}")));
    }
    let (levels, dy, warnings) = histogram_levels(proc, t, n_bins)?;
    let edge0 = levels[0] - 0.5 * dy;
    let total = levels.len();
    let mut occ = vec![0.0; total];
    let bin_of =
        |v: f64| (((v - edge0) / dy).floor() as isize).clamp(0, total as isize - 1) as usize;
    for (d, a, b) in proc.segments(t)? {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (j0, j1) = (bin_of(lo), bin_of(hi));
        if j0 == j1 || hi - lo <= 0.0 {
            occ[j0] += d;
            continue;
        }
        let rate = d / (hi - lo);
        for (j, slot) in occ.iter_mut().enumerate().take(j1 + 1).skip(j0) {
            let left = if j == j0 { lo } else { edge0 + j as f64 * dy };
            let right = if j == j1 {
                hi
            } else {
                edge0 + (j + 1) as f64 * dy
            };
            *slot += rate * (right - left).max(0.0);
        }
    }
    let local_time: Vec<f64> = occ.iter().map(|o| o / dy).collect();
    let derivative = smoothed_derivative(&local_time, dy);
    Ok(LocalTimeEstimate {
        t,
        levels,
        dy,
        local_time,
        derivative,
        estimator: Estimator::Histogram { n_bins },
        warnings,
    })
}

pub const DEFAULT_CUTOFF_SCALE: f64 = 40.0;
pub const DEFAULT_N_FREQ: usize = 512;
pub const FOURIER_MASS_TOL: f64 = 0.05;

/// Default cutoff `40 / std(X)` over the samples up to `t`.
pub fn default_cutoff(proc: &CurveProcess, t: f64) -> Result<f64> {
    let vals: Vec<f64> = proc
        .times
        .iter()
        .zip(&proc.values)
        .filter(|(s, _)| **s <= t)
        .map(|(_, v)| *v)
        .collect();
    let m = mean(&vals);
    let sd = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64).sqrt();
    if !(sd > 0.0) {
        return Err(LabError::Domain(
            "path has zero spread; Fourier cutoff undefined".into(),
        ));
    }
    Ok(DEFAULT_CUTOFF_SCALE / sd)
}

/// `L(t, y) = π⁻¹ ∫_0^U Re[e^{-iuy} ∫_0^t e^{iuX_s} ds] du` with the inner
/// integral exact on linear segments and the outer one by the midpoint rule.
pub fn estimate_fourier(
    proc: &CurveProcess,
    t: f64,
    u_cutoff: Option<f64>,
    n_freq: usize,
    levels: &[f64],
) -> Result<LocalTimeEstimate> {
    let u_cutoff = match u_cutoff {
        Some(u) => u,
        None => default_cutoff(proc, t)?,
    };
    if !(u_cutoff > 0.0) || !u_cutoff.is_finite() {
        return Err(LabError::Domain(format!(
            "cutoff must be positive, got {u_cutoff}"
        )));
    }
    if n_freq < 64 {
        return Err(LabError::Domain(format!(
            "need >= 64 frequencies, got {n_freq}"
        )));
    }
    if levels.len() < 2 {
        return Err(LabError::Domain("need >= 2 levels".into()));
    }
    let dy = levels[1] - levels[0];
    if levels
        .windows(2)
        .any(|w| ((w[1] - w[0]) - dy).abs() > 1e-9 * dy.abs())
        || dy <= 0.0
    {
        return Err(LabError::Domain(
            "levels must be increasing and equally spaced".into(),
        ));
    }
    let segs = proc.segments(t)?;
    let du = u_cutoff / n_freq as f64;
    let freqs: Vec<f64> = (0..n_freq).map(|k| (k as f64 + 0.5) * du).collect();
    let phi: Vec<(f64, f64)> = freqs
        .par_iter()
        .map(|&u| {
            let mut re = Vec::with_capacity(segs.len());
            let mut im = Vec::with_capacity(segs.len());
            for &(d, a, b) in &segs {
                let z = 0.5 * u * (b - a);
                let sinc = if z.abs() < 1e-8 {
                    1.0 - z * z / 6.0
                } else {
                    z.sin() / z
                };
                let (s, c) = (0.5 * u * (a + b)).sin_cos();
                re.push(d * c * sinc);
                im.push(d * s * sinc);
            }
            (pairwise_sum(&re), pairwise_sum(&im))
        })
        .collect();
    let (local_time, derivative): (Vec<f64>, Vec<f64>) = levels
        .par_iter()
        .map(|&y| {
            let mut l = 0.0;
            let mut dl = 0.0;
            for (&u, &(c, s)) in freqs.iter().zip(&phi) {
                let (sn, cs) = (u * y).sin_cos();
                l += c * cs + s * sn;
                dl += u * (s * cs - c * sn);
            }
            (
                l * du / std::f64::consts::PI,
                dl * du / std::f64::consts::PI,
            )
        })
        .unzip();
    let est = LocalTimeEstimate {
        t,
        levels: levels.to_vec(),
        dy,
        local_time,
        derivative,
        estimator: Estimator::Fourier { u_cutoff, n_freq },
        warnings: Vec::new(),
    };
    let mass_err = (est.mass() - t).abs() / t;
    if mass_err > FOURIER_MASS_TOL {
        return Err(LabError::Diagnostic(format!(
            "Fourier mass {} misses t = {t} by {:.1}%; raise the cutoff above {u_cutoff} or widen the levels",
            est.mass(),
            100.0 * mass_err
        )));
    }
    Ok(est)
}

/// Driftless field from zero initial data and its curve process.
pub fn driftless_process(
    grid: &SpaceTimeGrid,
    seed: u64,
    x: f64,
    curve: &Curve,
) -> Result<CurveProcess> {
    let field = solve(
        grid,
        &DriftSpec::zero(),
        &InitialCondition::zero(),
        &NoiseRealization::sample(*grid, seed),
    )?;
    CurveProcess::from_field(&field, x, curve)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolderRow {
    pub lag: f64,
    pub n_pairs: usize,
    /// `E[(X_t - X_{t'})²]` averaged over the pairs with this lag.
    pub mean_square: MeanSe,
    /// Average of `∫_{t'}^t ∫ G²`, the lower bound for the increment variance.
    pub lower: f64,
    /// Average exact increment variance of the continuum field.
    pub exact: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolderFit {
    pub rows: Vec<HolderRow>,
    /// Slope of `log E[(X_t - X_{t'})²]` against `log(t - t')`.
    pub slope: f64,
    /// Largest `c` with `E[...] ≥ c √(t - t')` at every lag.
    pub c_fit: f64,
    /// Every estimate exceeds the kernel lower bound minus 3 SE.
    pub lower_bound_ok: bool,
}

/// Pairs `(t, t - lag)` for every base time and lag.
pub fn lag_pairs(base_times: &[f64], lags: &[f64]) -> Vec<(f64, f64)> {
    base_times
        .iter()
        .flat_map(|&t| lags.iter().map(move |&l| (t, t - l)))
        .collect()
}

/// Increments `X_t - X_{t'}` over an ensemble of driftless fields, grouped
/// by lag `t - t'`.
pub fn holder_exponent_check(
    grid: &SpaceTimeGrid,
    x: f64,
    curve: &Curve,
    pairs: &[(f64, f64)],
    seeds: &[u64],
) -> Result<HolderFit> {
    if seeds.len() < 1000 {
        return Err(LabError::Domain(format!(
            "need >= 1000 seeds, got {}",
            seeds.len()
        )));
    }
    let mut groups: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
    for &(t, tp) in pairs {
        let (i, ip) = (grid.time_index(t)?, grid.time_index(tp)?);
        if ip >= i {
            return Err(LabError::Domain(format!("pair ({t}, {tp}) needs t > t'")));
        }
        match groups.iter_mut().find(|(k, _)| *k == i - ip) {
            Some((_, members)) => members.push((i, ip)),
            None => groups.push((i - ip, vec![(i, ip)])),
        }
    }
    if groups.len() < 4 {
        return Err(LabError::Domain(format!(
            "need >= 4 distinct lags, got {}",
            groups.len()
        )));
    }
    groups.sort_by_key(|(k, _)| *k);
    let per_seed: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|&s| {
            let p = driftless_process(grid, s, x, curve)?;
            Ok(groups
                .iter()
                .map(|(_, members)| {
                    members
                        .iter()
                        .map(|&(i, ip)| (p.values[i] - p.values[ip]).powi(2))
                        .sum::<f64>()
                        / members.len() as f64
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let pos = |s: f64| x + curve.eval(s);
    let rows: Vec<HolderRow> = groups
        .iter()
        .enumerate()
        .map(|(k, (steps, members))| {
            let sq: Vec<f64> = per_seed.iter().map(|v| v[k]).collect();
            let mut exact = 0.0;
            let mut lower = 0.0;
            for &(i, ip) in members {
                let (t, tp) = (grid.time(i), grid.time(ip));
                exact += covariance(t, t, pos(t), pos(t))? + covariance(tp, tp, pos(tp), pos(tp))?
                    - 2.0 * covariance(t, tp, pos(t), pos(tp))?;
                lower += g_squared_time_integral(tp, t, pos(t))?.value;
            }
            let n = members.len() as f64;
            Ok(HolderRow {
                lag: *steps as f64 * grid.dt(),
                n_pairs: members.len(),
                mean_square: MeanSe::from_samples(&sq),
                lower: lower / n,
                exact: exact / n,
            })
        })
        .collect::<Result<_>>()?;
    let lx: Vec<f64> = rows.iter().map(|r| r.lag.ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.mean_square.mean.ln()).collect();
    let slope = linear_fit(&lx, &ly).slope;
    let c_fit = rows
        .iter()
        .map(|r| r.mean_square.mean / r.lag.sqrt())
        .fold(f64::INFINITY, f64::min);
    let lower_bound_ok = rows
        .iter()
        .all(|r| r.mean_square.mean >= r.lower - 3.0 * r.mean_square.se);
    Ok(HolderFit {
        rows,
        slope,
        c_fit,
        lower_bound_ok,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NondeterminismReport {
    pub t: f64,
    pub conditioning_times: Vec<f64>,
    pub unconditional: f64,
    pub conditional: f64,
    /// `conditional / √(t - t_n)`.
    pub ratio: f64,
    /// Variance contributed by the noise after `t_n`.
    pub lower: f64,
    pub condition_number: f64,
    pub regularized: bool,
}

pub const MAX_CONDITIONING: usize = 12;
const CONDITION_LIMIT: f64 = 1e12;

/// `Var(X_t | X_{t_1}, ..., X_{t_n})` by Gaussian conditioning.
pub fn local_nondeterminism_check(
    x: f64,
    curve: &Curve,
    times: &[f64],
    t: f64,
) -> Result<NondeterminismReport> {
    let n = times.len();
    if n > MAX_CONDITIONING {
        return Err(LabError::Domain(format!(
            "at most {MAX_CONDITIONING} conditioning times, got {n}"
        )));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|&s| !(s > 0.0 && s < t)) {
        return Err(LabError::Domain(format!(
            "need 0 < t_1 < ... < t_n < t = {t}"
        )));
    }
    let pos = |s: f64| x + curve.eval(s);
    let mut points: Vec<(f64, f64)> = times.iter().map(|&s| (s, pos(s))).collect();
    points.push((t, pos(t)));
    let full = covariance_matrix(&points)?;
    let unconditional = full[(n, n)];
    let last = times.last().copied().unwrap_or(0.0);
    let lower = g_squared_time_integral(last, t, pos(t))?.value;
    if n == 0 {
        return Ok(NondeterminismReport {
            t,
            conditioning_times: vec![],
            unconditional,
            conditional: unconditional,
            ratio: unconditional / t.sqrt(),
            lower,
            condition_number: 1.0,
            regularized: false,
        });
    }
    let mut s11 = full.view((0, 0), (n, n)).into_owned();
    let s12: DVector<f64> = full.view((0, n), (n, 1)).column(0).into_owned();
    let eig = SymmetricEigen::new(s11.clone()).eigenvalues;
    let (emin, emax) = eig
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
    let condition_number = if emin > 0.0 {
        emax / emin
    } else {
        f64::INFINITY
    };
    let mut regularized = false;
    if condition_number > CONDITION_LIMIT {
        let ridge = emax / CONDITION_LIMIT;
        s11 += DMatrix::identity(n, n) * ridge;
        regularized = true;
    }
    let chol = s11.cholesky().ok_or_else(|| {
        LabError::LinearAlgebra(format!(
            "covariance not positive definite (condition {condition_number:.3e})"
        ))
    })?;
    let w = chol.solve(&s12);
    let conditional = unconditional - s12.dot(&w);
    Ok(NondeterminismReport {
        t,
        conditioning_times: times.to_vec(),
        unconditional,
        conditional,
        ratio: conditional / (t - last).sqrt(),
        lower,
        condition_number,
        regularized,
    })
}

/// `t^{m/4} √((2m)!) / Γ(m/2 + 1)^{1/6}`.
pub fn moment_bound_shape(m: usize, t: f64) -> f64 {
    let mf = m as f64;
    (0.25 * mf * t.ln() + 0.5 * lgamma(2.0 * mf + 1.0) - lgamma(0.5 * mf + 1.0) / 6.0).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentRow {
    pub m: usize,
    pub estimate: f64,
    pub ci: (f64, f64),
    /// Bootstrap interval narrower than the estimate.
    pub usable: bool,
    pub bound_shape: f64,
    /// `(ci_hi / shape)^{1/m}`, the constant this moment alone requires.
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    pub t: f64,
    pub n_paths: usize,
    pub rows: Vec<MomentRow>,
    /// Smallest `C` with `E[I^m] ≤ C^m · shape_m` for every usable `m`.
    pub c_fit: f64,
    /// All moments usable, so one constant covers every `m`.
    pub uniform: bool,
}

/// Moments of `I = ∫ |∂_y L(t, y)| dy` under the driftless law.
#[allow(clippy::too_many_arguments)]
pub fn moment_study(
    grid: &SpaceTimeGrid,
    x: f64,
    curve: &Curve,
    t: f64,
    m_max: usize,
    seeds: &[u64],
    n_bins: usize,
    n_boot: usize,
    boot_seed: u64,
) -> Result<MomentTable> {
    if m_max > 6 {
        return Err(LabError::Domain(format!("m_max must be <= 6, got {m_max}")));
    }
    if seeds.len() < 5000 {
        return Err(LabError::Domain(format!(
            "need >= 5000 paths, got {}",
            seeds.len()
        )));
    }
    let samples: Vec<f64> = seeds
        .par_iter()
        .map(|&s| {
            Ok(
                estimate_histogram(&driftless_process(grid, s, x, curve)?, t, n_bins)?
                    .abs_derivative_integral(),
            )
        })
        .collect::<Result<_>>()?;
    let table = moments_from_samples(&samples, t, m_max, n_boot, boot_seed);
    Ok(table)
}

/// Moment table for given samples of `I`.
pub fn moments_from_samples(
    samples: &[f64],
    t: f64,
    m_max: usize,
    n_boot: usize,
    boot_seed: u64,
) -> MomentTable {
    let mut rows = vec![MomentRow {
        m: 0,
        estimate: 1.0,
        ci: (1.0, 1.0),
        usable: true,
        bound_shape: 1.0,
        constant: 0.0,
    }];
    for m in 1..=m_max {
        let power = |v: &[f64]| mean(&v.iter().map(|s| s.powi(m as i32)).collect::<Vec<_>>());
        let estimate = power(samples);
        let ci = bootstrap_ci(
            samples,
            power,
            n_boot,
            0.05,
            boot_seed.wrapping_add(m as u64),
        );
        let shape = moment_bound_shape(m, t);
        rows.push(MomentRow {
            m,
            estimate,
            ci,
            usable: estimate.is_finite() && ci.1 - ci.0 < estimate,
            bound_shape: shape,
            constant: (ci.1 / shape).powf(1.0 / m as f64),
        });
    }
    let c_fit = rows
        .iter()
        .skip(1)
        .filter(|r| r.usable)
        .map(|r| r.constant)
        .fold(0.0, f64::max);
    let uniform = rows.iter().all(|r| r.usable);
    MomentTable {
        t,
        n_paths: samples.len(),
        rows,
        c_fit,
        uniform,
    }
}
