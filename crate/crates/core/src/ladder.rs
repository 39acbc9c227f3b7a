//! Approximation ladder for a bounded measurable drift: mollifications
//! `b_n = n ρ(n·) * b`, running minima `b̃_{n,k} = min_{n≤j≤k} b_j` and their
//! limits `B_n = inf_{j≥n} b_j`, plus the Monte Carlo study comparing the
//! ladder solutions with the direct solve.

use std::sync::Arc;

use once_cell::sync::Lazy;
use rayon::prelude::*;

use crate::drift::{Drift, DriftSpec, Smoothness};
use crate::error::{LabError, Result};
use crate::grid::SpaceTimeGrid;
use crate::noise::NoiseRealization;
use crate::quadrature::integrate;
use crate::solver::{solve, InitialCondition};
use crate::stats::MeanSe;

/// Points in the fixed trapezoid rule used for generic (non step) bases.
pub const MOLLIFIER_POINTS: usize = 401;

const CDF_INTERVALS: usize = 4096;

/// The standard bump `ρ(y) ∝ exp(-1/(1-y²))` on `(-1, 1)`, normalized to unit
/// mass, with a tabulated distribution function.
pub struct Mollifier {
    norm: f64,
    cdf_nodes: Vec<f64>,
    trap_rho: Vec<f64>,
    trap_drho: Vec<f64>,
    trap_z: Vec<f64>,
}

fn bump(y: f64) -> f64 {
    if y.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - y * y)).exp()
    }
}

static MOLLIFIER: Lazy<Mollifier> = Lazy::new(Mollifier::build);

impl Mollifier {
    pub fn get() -> &'static Mollifier {
        &MOLLIFIER
    }

    fn build() -> Self {
        let norm = integrate(bump, -1.0, 1.0, 1e-16, 1e-15)
            .expect("bump integral")
            .value;
        let h = 2.0 / CDF_INTERVALS as f64;
        let mut cdf_nodes = Vec::with_capacity(CDF_INTERVALS + 1);
        let mut acc = 0.0;
        cdf_nodes.push(0.0);
        for k in 0..CDF_INTERVALS {
            let a = -1.0 + k as f64 * h;
            acc += integrate(bump, a, a + h, 1e-18, 1e-15)
                .expect("bump piece")
                .value;
            cdf_nodes.push(acc / norm);
        }
        // Remove accumulated rounding so the table ends exactly at one.
        let last = *cdf_nodes.last().unwrap();
        for v in cdf_nodes.iter_mut() {
            *v /= last;
        }
        let mirrored: Vec<f64> = cdf_nodes.iter().rev().map(|v| 1.0 - v).collect();
        for (v, m) in cdf_nodes.iter_mut().zip(mirrored) {
            *v = 0.5 * (*v + m);
        }
        let m = MOLLIFIER_POINTS - 1;
        let hz = 2.0 / m as f64;
        let trap_z: Vec<f64> = (0..=m).map(|k| -1.0 + k as f64 * hz).collect();
        let trap_rho = trap_z.iter().map(|&z| hz * bump(z) / norm).collect();
        let trap_drho = trap_z
            .iter()
            .map(|&z| {
                if z.abs() >= 1.0 {
                    0.0
                } else {
                    hz * bump(z) / norm * (-2.0 * z / (1.0 - z * z).powi(2))
                }
            })
            .collect();
        Self {
            norm,
            cdf_nodes,
            trap_rho,
            trap_drho,
            trap_z,
        }
    }

    /// `∫ exp(-1/(1-y²)) dy` over `(-1, 1)`.
    pub fn normalization(&self) -> f64 {
        self.norm
    }

    pub fn density(&self, y: f64) -> f64 {
        bump(y) / self.norm
    }

    pub fn density_derivative(&self, y: f64) -> f64 {
        if y.abs() >= 1.0 {
            0.0
        } else {
            self.density(y) * (-2.0 * y / (1.0 - y * y).powi(2))
        }
    }

    /// `∫_{-1}^{z} ρ`, by cubic Hermite interpolation of the tabulated values
    /// with the exact density as slope.
    pub fn cdf(&self, z: f64) -> f64 {
        if z <= -1.0 {
            return 0.0;
        }
        if z >= 1.0 {
            return 1.0;
        }
        if z < 0.0 {
            return 1.0 - self.cdf(-z);
        }
        let h = 2.0 / CDF_INTERVALS as f64;
        let s = (z + 1.0) / h;
        let k = (s.floor() as usize).min(CDF_INTERVALS - 1);
        let a = -1.0 + k as f64 * h;
        let u = (z - a) / h;
        let (p0, p1) = (self.cdf_nodes[k], self.cdf_nodes[k + 1]);
        let (m0, m1) = (h * self.density(a), h * self.density(a + h));
        let u2 = u * u;
        let u3 = u2 * u;
        let v = (2.0 * u3 - 3.0 * u2 + 1.0) * p0
            + (u3 - 2.0 * u2 + u) * m0
            + (-2.0 * u3 + 3.0 * u2) * p1
            + (u3 - u2) * m1;
        v.clamp(0.0, 1.0)
    }
}

/// `b_n` for one `n`.
#[derive(Clone)]
struct Mollified {
    n: f64,
    base: DriftSpec,
}

impl Mollified {
    fn value(&self, x: f64) -> f64 {
        let m = Mollifier::get();
        if let Some(steps) = self.base.func().as_steps() {
            let r = 1.0 / self.n;
            let bp = steps.breakpoints();
            let lo = bp.partition_point(|&a| a <= x - r);
            let hi = bp.partition_point(|&a| a < x + r);
            let mut v = steps.values()[lo];
            for k in lo..hi {
                let jump = steps.values()[k + 1] - steps.values()[k];
                v += jump * m.cdf(self.n * (x - bp[k]));
            }
            v
        } else {
            let vals: Vec<f64> = m
                .trap_z
                .iter()
                .zip(&m.trap_rho)
                .map(|(&z, &w)| w * self.base.eval(x - z / self.n))
                .collect();
            crate::stats::pairwise_sum(&vals)
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        let m = Mollifier::get();
        if let Some(steps) = self.base.func().as_steps() {
            let r = 1.0 / self.n;
            let bp = steps.breakpoints();
            let lo = bp.partition_point(|&a| a <= x - r);
            let hi = bp.partition_point(|&a| a < x + r);
            (lo..hi)
                .map(|k| {
                    let jump = steps.values()[k + 1] - steps.values()[k];
                    jump * self.n * m.density(self.n * (x - bp[k]))
                })
                .sum()
        } else {
            let vals: Vec<f64> = m
                .trap_z
                .iter()
                .zip(&m.trap_drho)
                .map(|(&z, &w)| w * self.base.eval(x - z / self.n))
                .collect();
            self.n * crate::stats::pairwise_sum(&vals)
        }
    }
}

/// Which rung of the ladder a member is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LadderKind {
    Mollified {
        n: usize,
    },
    RunningMin {
        n: usize,
        k: usize,
    },
    /// `B_n` approximated by the running minimum up to `k`.
    InfLimit {
        n: usize,
        k: usize,
    },
}

/// One member of the ladder; evaluable as a [`Drift`].
#[derive(Clone)]
pub struct LadderMember {
    base: DriftSpec,
    kind: LadderKind,
    parts: Vec<Mollified>,
}

impl Drift for LadderMember {
    fn value(&self, x: f64) -> f64 {
        self.parts
            .iter()
            .map(|p| p.value(x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Derivative of the active (minimizing) member; for a running minimum
    /// this is a one-sided derivative at switching points.
    fn derivative(&self, x: f64) -> Option<f64> {
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for (k, p) in self.parts.iter().enumerate() {
            let v = p.value(x);
            if v < best {
                best = v;
                arg = k;
            }
        }
        Some(self.parts[arg].derivative(x))
    }
}

impl LadderMember {
    pub fn kind(&self) -> LadderKind {
        self.kind
    }

    pub fn base(&self) -> &DriftSpec {
        &self.base
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.value(x)
    }

    /// Upper bound on the Lipschitz constant: `k ‖b‖_∞ ∫|ρ'|` with
    /// `∫|ρ'| = 2ρ(0)`.
    pub fn lipschitz_bound(&self) -> f64 {
        let top = self.parts.iter().map(|p| p.n).fold(0.0, f64::max);
        top * self.base.sup_norm() * 2.0 * Mollifier::get().density(0.0)
    }

    /// Largest difference quotient over consecutive `points`.
    pub fn lipschitz_estimate(&self, points: &[f64]) -> f64 {
        points
            .windows(2)
            .map(|w| ((self.value(w[1]) - self.value(w[0])) / (w[1] - w[0])).abs())
            .fold(0.0, f64::max)
    }

    fn label(&self) -> String {
        match self.kind {
            LadderKind::Mollified { n } => format!("mollify({},{n})", self.base.name()),
            LadderKind::RunningMin { n, k } => format!("runmin({},{n},{k})", self.base.name()),
            LadderKind::InfLimit { n, k } => format!("inf({},{n};k={k})", self.base.name()),
        }
    }

    /// Wrap as a drift specification. Mollifications are C¹; running minima
    /// are declared Lipschitz with [`LadderMember::lipschitz_bound`].
    pub fn to_spec(&self) -> DriftSpec {
        let smoothness = match self.kind {
            LadderKind::Mollified { .. } => Smoothness::C1,
            _ => Smoothness::Lipschitz(self.lipschitz_bound()),
        };
        DriftSpec::new(
            self.label(),
            self.base.sup_norm(),
            smoothness,
            Arc::new(self.clone()),
        )
        .expect("ladder members inherit a valid sup-norm")
    }
}

fn probe_base(base: &DriftSpec) -> Result<()> {
    for k in 0..=200 {
        let x = -10.0 + 0.1 * k as f64;
        let v = base.eval(x);
        if !v.is_finite() {
            return Err(LabError::Quadrature(format!(
                "mollification of {} impossible: b({x}) = {v}",
                base.name()
            )));
        }
    }
    Ok(())
}

/// `b_n(x) = n ∫ ρ(n(x-y)) b(y) dy`.
pub fn mollify(base: &DriftSpec, n: usize) -> Result<LadderMember> {
    if n == 0 {
        return Err(LabError::Domain("mollification index must be >= 1".into()));
    }
    probe_base(base)?;
    Ok(LadderMember {
        base: base.clone(),
        kind: LadderKind::Mollified { n },
        parts: vec![Mollified {
            n: n as f64,
            base: base.clone(),
        }],
    })
}

/// `min_{n ≤ j ≤ k} b_j`.
pub fn running_min(base: &DriftSpec, n: usize, k: usize) -> Result<LadderMember> {
    if n == 0 || n > k {
        return Err(LabError::Domain(format!(
            "running minimum needs 1 <= n <= k, got n = {n}, k = {k}"
        )));
    }
    probe_base(base)?;
    Ok(LadderMember {
        base: base.clone(),
        kind: LadderKind::RunningMin { n, k },
        parts: (n..=k)
            .map(|j| Mollified {
                n: j as f64,
                base: base.clone(),
            })
            .collect(),
    })
}

/// `B_n` on a finite set of `points`: doubles `k` until the running minima at
/// `k` and `2k` differ by less than `tol` on every point.
pub fn inf_limit(
    base: &DriftSpec,
    n: usize,
    points: &[f64],
    tol: f64,
    k_max: usize,
) -> Result<LadderMember> {
    let mut k = (2 * n).max(n + 1);
    let mut current = running_min(base, n, k)?;
    loop {
        let next_k = 2 * k;
        if next_k > k_max {
            return Err(LabError::Domain(format!(
                "infimum over j >= {n} not settled on the grid by k = {k_max}"
            )));
        }
        let next = running_min(base, n, next_k)?;
        let gap = points
            .iter()
            .map(|&x| current.value(x) - next.value(x))
            .fold(0.0, f64::max);
        if gap < tol {
            return Ok(LadderMember {
                kind: LadderKind::InfLimit { n, k: next_k },
                ..next
            });
        }
        current = next;
        k = next_k;
    }
}

/// One schedule entry of the convergence study.
#[derive(Debug, Clone)]
pub struct LadderRow {
    pub n: usize,
    pub k: usize,
    pub seeds: usize,
    /// `E[(u_{n,k} - u_base)²]` at the probe.
    pub mse: MeanSe,
    /// `E[(u_{n,k} - u_prev)²]` against the previous schedule entry.
    pub cauchy: Option<MeanSe>,
    /// Mean of `(u_{n,k} - u)² - (u_prev - u)²` with its paired error.
    pub step_change: Option<MeanSe>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceTable {
    pub rows: Vec<LadderRow>,
    /// Every step keeps the squared distance from increasing by more than
    /// two standard errors of the paired difference.
    pub monotone: bool,
    /// Cauchy distances do not increase by more than two standard errors.
    pub cauchy_decreasing: bool,
}

/// Monte Carlo mean-square distance between ladder solutions and the direct
/// solve with the base drift, with common noise per seed.
pub fn convergence_study(
    base: &DriftSpec,
    grid: &SpaceTimeGrid,
    u0: &InitialCondition,
    probe: (f64, f64),
    seeds: &[u64],
    schedule: &[(usize, usize)],
) -> Result<ConvergenceTable> {
    if schedule.is_empty() {
        return Err(LabError::Domain(
            "convergence study needs a non-empty schedule".into(),
        ));
    }
    if seeds.len() < 100 {
        return Err(LabError::Domain(format!(
            "convergence study needs >= 100 seeds, got {}",
            seeds.len()
        )));
    }
    let (pi, pj) = grid.probe_index(probe.0, probe.1)?;
    let members: Vec<DriftSpec> = schedule
        .iter()
        .map(|&(n, k)| running_min(base, n, k).map(|m| m.to_spec()))
        .collect::<Result<_>>()?;

    let per_seed: Vec<(f64, Vec<f64>)> = seeds
        .par_iter()
        .map(|&seed| -> Result<(f64, Vec<f64>)> {
            let noise = NoiseRealization::sample(*grid, seed);
            let reference = solve(grid, base, u0, &noise)?.value(pi, pj);
            let ladder = members
                .iter()
                .map(|d| solve(grid, d, u0, &noise).map(|f| f.value(pi, pj)))
                .collect::<Result<Vec<_>>>()?;
            Ok((reference, ladder))
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<LadderRow> = Vec::with_capacity(schedule.len());
    let mut monotone = true;
    let mut cauchy_decreasing = true;
    for (idx, &(n, k)) in schedule.iter().enumerate() {
        let sq: Vec<f64> = per_seed.iter().map(|(r, l)| (l[idx] - r).powi(2)).collect();
        let mse = MeanSe::from_samples(&sq);
        let (cauchy, step_change) = if idx == 0 {
            (None, None)
        } else {
            let c: Vec<f64> = per_seed
                .iter()
                .map(|(_, l)| (l[idx] - l[idx - 1]).powi(2))
                .collect();
            let d: Vec<f64> = per_seed
                .iter()
                .map(|(r, l)| (l[idx] - r).powi(2) - (l[idx - 1] - r).powi(2))
                .collect();
            (
                Some(MeanSe::from_samples(&c)),
                Some(MeanSe::from_samples(&d)),
            )
        };
        if let Some(d) = step_change {
            if d.mean > 2.0 * d.se {
                monotone = false;
            }
        }
        if let (Some(c), Some(prev)) = (cauchy, rows.last().and_then(|r| r.cauchy)) {
            if c.mean > prev.mean + 2.0 * c.se.hypot(prev.se) {
                cauchy_decreasing = false;
            }
        }
        rows.push(LadderRow {
            n,
            k,
            seeds: seeds.len(),
            mse,
            cauchy,
            step_change,
        });
    }
    Ok(ConvergenceTable {
        rows,
        monotone,
        cauchy_decreasing,
    })
}

/// Largest violation of `u_{n,k'} <= u_{n,k}` (for `k < k'`) over all grid
/// nodes, for one noise realization and increasing `ks`.
pub fn comparison_violation(
    base: &DriftSpec,
    grid: &SpaceTimeGrid,
    u0: &InitialCondition,
    noise: &NoiseRealization,
    n: usize,
    ks: &[usize],
) -> Result<f64> {
    let fields = ks
        .iter()
        .map(|&k| solve(grid, &running_min(base, n, k)?.to_spec(), u0, noise))
        .collect::<Result<Vec<_>>>()?;
    let mut worst: f64 = 0.0;
    for pair in fields.windows(2) {
        for (hi_k, lo_k) in pair[1].values().iter().zip(pair[0].values()) {
            worst = worst.max(hi_k - lo_k);
        }
    }
    Ok(worst)
}
