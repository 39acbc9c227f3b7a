//! Neumann heat kernel on `[0, 1]` for the operator `∂_t - ∂²_x`.
//!
//! Two series represent the same kernel:
//!
//! * images: `(4πt)^{-1/2} Σ_n [e^{-(y-x-2n)²/4t} + e^{-(y+x-2n)²/4t}]`,
//!   fast for small `t`;
//! * cosine modes: `1 + 2 Σ_{n≥1} e^{-n²π²t} cos(nπx) cos(nπy)`, fast for
//!   large `t`.
//!
//! [`green`] switches between them at [`SPECTRAL_SWITCH_TIME`]. Time integrals
//! of `G` and `G²` reduce to one-dimensional integrals of `G` through the
//! semigroup property `∫ G(s,x,z) G(r,z,y) dz = G(s+r,x,y)`.

use std::f64::consts::PI;

use libm::erf;
use nalgebra::DMatrix;

use crate::error::{ensure_finite, LabError, Result};
use crate::quadrature::{integrate_sqrt_singular, Integral};

/// Above this time the cosine series is used by [`green`].
pub const SPECTRAL_SWITCH_TIME: f64 = 0.05;

/// Truncation tolerance used internally when kernel values feed quadrature.
pub const KERNEL_TOL: f64 = 1e-15;

const MAX_SPECTRAL_TERMS: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Series {
    Images,
    Spectral,
}

/// A kernel value together with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelEval {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub tol: f64,
    pub value: f64,
    /// Image shells (or cosine modes) actually summed.
    pub n_terms: usize,
    pub series: Series,
}

fn check_position(name: &str, v: f64) -> Result<()> {
    ensure_finite(name, v)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(LabError::Domain(format!(
            "{name} = {v} lies outside [0, 1]"
        )));
    }
    Ok(())
}

fn check_args(t: f64, x: f64, y: f64, tol: f64) -> Result<()> {
    ensure_finite("t", t)?;
    if t <= 0.0 {
        return Err(LabError::Domain(format!(
            "kernel time must be positive, got {t}"
        )));
    }
    check_position("x", x)?;
    check_position("y", y)?;
    if !(tol > 0.0) {
        return Err(LabError::Domain(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    Ok(())
}

/// Kernel by the method of images.
pub fn green_images(t: f64, x: f64, y: f64, tol: f64) -> Result<KernelEval> {
    check_args(t, x, y, tol)?;
    let pref = 1.0 / (4.0 * PI * t).sqrt();
    let g = |d: f64| (-(d * d) / (4.0 * t)).exp();
    let diff = y - x;
    let sum = y + x;
    let mut total = g(diff) + g(sum);
    let mut shells = 0;
    for k in 1.. {
        let s = 2.0 * k as f64;
        let shell = (g(diff - s) + g(diff + s)) + (g(sum - s) + g(sum + s));
        total += shell;
        shells = k;
        // Beyond |2k| > 2 every image term decays monotonically, so once a
        // shell drops well below tol the remaining tail does too.
        if k >= 2 && pref * shell < 1e-3 * tol {
            break;
        }
    }
    Ok(KernelEval {
        t,
        x,
        y,
        tol,
        value: pref * total,
        n_terms: shells,
        series: Series::Images,
    })
}

/// Kernel by its cosine eigen-expansion.
pub fn green_spectral(t: f64, x: f64, y: f64, tol: f64) -> Result<KernelEval> {
    check_args(t, x, y, tol)?;
    let mut total = 1.0;
    let mut n = 0usize;
    loop {
        n += 1;
        let nf = n as f64;
        let decay = (-nf * nf * PI * PI * t).exp();
        total += 2.0 * decay * ((nf * PI * x).cos() * (nf * PI * y).cos());
        let next = nf + 1.0;
        let tail = 2.0 * (-next * next * PI * PI * t).exp()
            / (1.0 - (-(2.0 * next + 1.0) * PI * PI * t).exp());
        if tail < tol {
            break;
        }
        if n >= MAX_SPECTRAL_TERMS {
            return Err(LabError::Domain(format!(
                "cosine series needs more than {MAX_SPECTRAL_TERMS} modes at t = {t}"
            )));
        }
    }
    Ok(KernelEval {
        t,
        x,
        y,
        tol,
        value: total,
        n_terms: n,
        series: Series::Spectral,
    })
}

/// `G(t, x, y)` to absolute accuracy `tol`.
pub fn green(t: f64, x: f64, y: f64, tol: f64) -> Result<KernelEval> {
    if t > SPECTRAL_SWITCH_TIME {
        green_spectral(t, x, y, tol)
    } else {
        green_images(t, x, y, tol)
    }
}

/// Kernel value only, at [`KERNEL_TOL`].
pub fn green_value(t: f64, x: f64, y: f64) -> Result<f64> {
    green(t, x, y, KERNEL_TOL).map(|k| k.value)
}

/// Transition distribution function `∫_0^y G(t, x, z) dz`.
pub fn green_cdf(t: f64, x: f64, y: f64) -> Result<f64> {
    check_args(t, x, y, 1.0)?;
    let scale = 2.0 * t.sqrt();
    let n_max = (6.0 * t.sqrt()).ceil() as i64 + 2;
    let mut total = 0.0;
    for n in -n_max..=n_max {
        let s = 2.0 * n as f64;
        total += erf((y - x - s) / scale) - erf((-x - s) / scale);
        total += erf((y + x - s) / scale) - erf((x - s) / scale);
    }
    Ok((0.5 * total).clamp(0.0, 1.0))
}

/// `∫_{r_lo}^{r_hi} G(r, x1, x2) dr`, with the `r^{-1/2}` behaviour at
/// `r_lo = 0` removed by substitution.
pub fn time_integrated_green(r_lo: f64, r_hi: f64, x1: f64, x2: f64) -> Result<Integral> {
    ensure_finite("r_lo", r_lo)?;
    ensure_finite("r_hi", r_hi)?;
    check_position("x1", x1)?;
    check_position("x2", x2)?;
    if r_lo < 0.0 || r_hi < r_lo {
        return Err(LabError::Domain(format!(
            "time-integral bounds must satisfy 0 <= r_lo <= r_hi, got [{r_lo}, {r_hi}]"
        )));
    }
    if r_hi == r_lo {
        return Ok(Integral {
            value: 0.0,
            error: 0.0,
        });
    }
    let mut failure = None;
    let out = integrate_sqrt_singular(
        |r| {
            if r <= 0.0 {
                return 0.0;
            }
            match green(r, x1, x2, KERNEL_TOL) {
                Ok(k) => k.value,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        r_lo,
        r_hi,
        1e-13,
        1e-12,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    out
}

/// `∫_{t_lo}^{t_hi} ∫_0^1 G²(t_hi - s, x, y) dy ds`.
///
/// Uses `∫_0^1 G²(τ,x,y) dy = G(2τ,x,x)`, so the value is
/// `½ ∫_0^{2Δ} G(r,x,x) dr` with `Δ = t_hi - t_lo`.
pub fn g_squared_time_integral(t_lo: f64, t_hi: f64, x: f64) -> Result<Integral> {
    ensure_finite("t_lo", t_lo)?;
    ensure_finite("t_hi", t_hi)?;
    if t_lo < 0.0 {
        return Err(LabError::Domain(format!(
            "t_lo must be non-negative, got {t_lo}"
        )));
    }
    if t_lo > t_hi {
        return Err(LabError::Domain(format!(
            "need t_lo < t_hi, got t_lo = {t_lo}, t_hi = {t_hi}"
        )));
    }
    let half = time_integrated_green(0.0, 2.0 * (t_hi - t_lo), x, x)?;
    Ok(Integral {
        value: 0.5 * half.value,
        error: 0.5 * half.error,
    })
}

/// Covariance of the driftless field with zero initial data,
/// `∫_0^{t1∧t2} ∫_0^1 G(t1-s,x1,y) G(t2-s,x2,y) dy ds = ½ ∫_{|t1-t2|}^{t1+t2} G(r,x1,x2) dr`.
pub fn covariance(t1: f64, t2: f64, x1: f64, x2: f64) -> Result<f64> {
    ensure_finite("t1", t1)?;
    ensure_finite("t2", t2)?;
    if t1 <= 0.0 || t2 <= 0.0 {
        return Err(LabError::Domain(format!(
            "covariance times must be positive, got {t1}, {t2}"
        )));
    }
    let r = time_integrated_green((t1 - t2).abs(), t1 + t2, x1, x2)?;
    Ok(0.5 * r.value)
}

/// Covariance matrix of the driftless field at space-time points `(t, x)`.
pub fn covariance_matrix(points: &[(f64, f64)]) -> Result<DMatrix<f64>> {
    let n = points.len();
    let mut m = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let c = covariance(points[a].0, points[b].0, points[a].1, points[b].1)?;
            m[(a, b)] = c;
            m[(b, a)] = c;
        }
    }
    Ok(m)
}

/// One row of the band fit: `Δt`, `x` and `∫∫G² / √Δt`.
#[derive(Debug, Clone, Copy)]
pub struct BandRow {
    pub dt_gap: f64,
    pub x: f64,
    pub value: f64,
    pub ratio: f64,
}

/// Band `[c, C]` containing `∫_{t-Δ}^t ∫ G² / √Δ` over the sampled gaps.
#[derive(Debug, Clone)]
pub struct BandFit {
    pub c_lower: f64,
    pub c_upper: f64,
    pub rows: Vec<BandRow>,
}

/// Fit the constants of the two-sided square-root bound on `∫∫G²`.
pub fn fit_sqrt_band(gaps: &[f64], positions: &[f64]) -> Result<BandFit> {
    if gaps.is_empty() || positions.is_empty() {
        return Err(LabError::Domain(
            "band fit needs at least one gap and one position".into(),
        ));
    }
    let mut rows = Vec::with_capacity(gaps.len() * positions.len());
    for &d in gaps {
        for &x in positions {
            let v = g_squared_time_integral(0.0, d, x)?.value;
            rows.push(BandRow {
                dt_gap: d,
                x,
                value: v,
                ratio: v / d.sqrt(),
            });
        }
    }
    let c_lower = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let c_upper = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(BandFit {
        c_lower,
        c_upper,
        rows,
    })
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;

    #[test]
    fn symmetric_bitwise() {
        for &t in &[1e-3, 0.02, 0.3, 2.0] {
            let a = green(t, 0.3, 0.7, 1e-14).unwrap().value;
            let b = green(t, 0.7, 0.3, 1e-14).unwrap().value;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn mass_is_conserved() {
        for &t in &[1e-4, 0.01, 0.1, 1.0] {
            for &x in &[0.0, 0.13, 0.5, 1.0] {
                let m = integrate(|y| green_value(t, x, y).unwrap(), 0.0, 1.0, 1e-13, 0.0)
                    .unwrap()
                    .value;
                assert!((m - 1.0).abs() < 1e-8, "t={t} x={x} mass={m}");
            }
        }
    }

    #[test]
    fn cdf_matches_integrated_density() {
        let (t, x) = (0.03, 0.2);
        let direct = integrate(|z| green_value(t, x, z).unwrap(), 0.0, 0.45, 1e-13, 0.0)
            .unwrap()
            .value;
        let c = green_cdf(t, x, 0.45).unwrap();
        assert!((c - direct).abs() < 1e-12, "{c} vs {direct}");
        assert!((green_cdf(t, x, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        assert!(green(0.0, 0.5, 0.5, 1e-10).is_err());
        assert!(green(-1.0, 0.5, 0.5, 1e-10).is_err());
        assert!(green(0.1, f64::NAN, 0.5, 1e-10).is_err());
        assert!(green(0.1, 0.5, 1.2, 1e-10).is_err());
        assert!(g_squared_time_integral(0.5, 0.2, 0.5).is_err());
        assert!(covariance(0.0, 0.2, 0.5, 0.5).is_err());
        assert!(covariance(f64::INFINITY, 0.2, 0.5, 0.5).is_err());
    }

    #[test]
    fn empty_interval_is_zero() {
        let v = g_squared_time_integral(0.3, 0.3, 0.5).unwrap();
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn covariance_diagonal_coincides_with_g_squared() {
        for &(t, x) in &[(0.5, 0.5), (0.2, 0.0), (1.0, 0.9)] {
            let c = covariance(t, t, x, x).unwrap();
            let g = g_squared_time_integral(0.0, t, x).unwrap().value;
            assert_eq!(c, g);
        }
    }

    #[test]
    fn covariance_is_symmetric() {
        let a = covariance(0.2, 0.7, 0.1, 0.6).unwrap();
        let b = covariance(0.7, 0.2, 0.6, 0.1).unwrap();
        assert!((a - b).abs() < 1e-14);
    }
}
