//! Permanents of the tridiagonal matrices `M Σ Mᵀ` built from time gaps, the
//! symbolic polynomial behind their recursion, and simplex integrals of
//! their powers.

use std::collections::BTreeMap;

use libm::lgamma;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

use crate::error::{ensure_finite, LabError, Result};
use crate::rng::{stream_rng, Stream};
use crate::stats::pairwise_sum;

/// Times `t > s_1 > ... > s_m > 0`, kept as gaps `g_j = s_j - s_{j+1}` with
/// `s_{m+1} = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GapVector {
    gaps: Vec<f64>,
}

impl GapVector {
    pub fn from_gaps(gaps: Vec<f64>) -> Result<Self> {
        if gaps.is_empty() {
            return Err(LabError::Domain("gap vector needs m >= 1".into()));
        }
        for (j, &g) in gaps.iter().enumerate() {
            ensure_finite("gap", g)?;
            if g <= 0.0 {
                return Err(LabError::Domain(format!(
                    "gap {} is {g}, must be positive",
                    j + 1
                )));
            }
        }
        Ok(Self { gaps })
    }

    /// From decreasing times `s_1 > ... > s_m > 0`.
    pub fn from_times(s: &[f64]) -> Result<Self> {
        let gaps = (0..s.len())
            .map(|j| s[j] - s.get(j + 1).copied().unwrap_or(0.0))
            .collect();
        Self::from_gaps(gaps)
    }

    /// Gaps with `σ_j = g_j^{-1/2}` equal to the given values.
    pub fn from_sigmas(sigma: &[f64]) -> Result<Self> {
        Self::from_gaps(sigma.iter().map(|s| 1.0 / (s * s)).collect())
    }

    pub fn m(&self) -> usize {
        self.gaps.len()
    }

    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    /// `s_j = Σ_{i ≥ j} g_i`, `j = 1..=m+1`.
    pub fn times(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.m() + 1];
        for j in (0..self.m()).rev() {
            s[j] = s[j + 1] + self.gaps[j];
        }
        s
    }

    /// Diagonal of `Σ`.
    pub fn sigmas(&self) -> Vec<f64> {
        self.gaps.iter().map(|g| g.powf(-0.5)).collect()
    }
}

/// Symmetric tridiagonal `M Σ Mᵀ`: diagonal `a`, off-diagonal `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagSystem {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub gaps: GapVector,
}

impl TridiagSystem {
    pub fn new(gaps: &GapVector) -> Self {
        let sigma = gaps.sigmas();
        let m = sigma.len();
        let a = (0..m)
            .map(|j| sigma[j] + sigma.get(j + 1).copied().unwrap_or(0.0))
            .collect();
        let b = (1..m).map(|j| -sigma[j]).collect();
        Self {
            a,
            b,
            gaps: gaps.clone(),
        }
    }

    pub fn m(&self) -> usize {
        self.a.len()
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let m = self.m();
        DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                self.a[i]
            } else if i + 1 == j {
                self.b[i]
            } else if j + 1 == i {
                self.b[j]
            } else {
                0.0
            }
        })
    }
}

/// `M Σ Mᵀ` by dense products, with `M = I - (superdiagonal ones)`.
pub fn direct_product(gaps: &GapVector) -> DMatrix<f64> {
    let m = gaps.m();
    let mm = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            1.0
        } else if i + 1 == j {
            -1.0
        } else {
            0.0
        }
    });
    let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(gaps.sigmas()));
    &mm * sigma * mm.transpose()
}

/// Base case of the recursion `f_m = (σ_1 + σ_2) f_{m-1} + σ_2² f_{m-2}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BaseCase {
    /// `f_2 = σ_1 σ_2 + σ_2²` as printed.
    Printed,
    /// `f_2 = σ_1 σ_2 + 2 σ_2²`, the permanent of the 2×2 system.
    #[default]
    Permanent,
}

/// `f_m` evaluated bottom-up from the last gap.
pub fn permanent_recursive(gaps: &GapVector, base: BaseCase) -> f64 {
    let s = gaps.sigmas();
    let m = s.len();
    // f[j] is the value for the trailing system starting at index j.
    let mut f = vec![0.0; m + 1];
    f[m] = 1.0;
    f[m - 1] = s[m - 1];
    for j in (0..m.saturating_sub(1)).rev() {
        let next = s[j + 1];
        f[j] = if j + 2 == m && base == BaseCase::Printed {
            s[j] * next + next * next
        } else {
            (s[j] + next) * f[j + 1] + next * next * f[j + 2]
        };
    }
    f[0]
}

pub const RYSER_MAX: usize = 14;

/// Exact permanent by Ryser's formula with Gray-code row-sum updates.
pub fn permanent_ryser(a: &DMatrix<f64>) -> Result<f64> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(LabError::Domain(format!(
            "matrix is {}x{}, not square",
            n,
            a.ncols()
        )));
    }
    if n > RYSER_MAX {
        return Err(LabError::Domain(format!(
            "Ryser limited to m <= {RYSER_MAX}, got {n}"
        )));
    }
    if n == 0 {
        return Ok(1.0);
    }
    let mut row_sums = vec![0.0; n];
    let mut total = 0.0;
    let mut comp = 0.0;
    let mut gray: u32 = 0;
    for k in 1u32..(1 << n) {
        let next = k ^ (k >> 1);
        let col = (gray ^ next).trailing_zeros() as usize;
        let sign = if next & (1 << col) != 0 { 1.0 } else { -1.0 };
        for (i, r) in row_sums.iter_mut().enumerate() {
            *r += sign * a[(i, col)];
        }
        gray = next;
        let prod: f64 = row_sums.iter().product();
        let term = if (n - next.count_ones() as usize) % 2 == 0 {
            prod
        } else {
            -prod
        };
        // Neumaier compensated sum
        let t = total + term;
        comp += if total.abs() >= term.abs() {
            (total - t) + term
        } else {
            (term - t) + total
        };
        total = t;
    }
    Ok(total + comp)
}

/// `p_m` expanded with like terms combined. Exponent vectors have length `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PermanentPolynomial {
    pub m: usize,
    pub terms: BTreeMap<Vec<u8>, u64>,
}

impl PermanentPolynomial {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let vals: Vec<f64> = self
            .terms
            .iter()
            .map(|(alpha, &c)| {
                c as f64
                    * alpha
                        .iter()
                        .zip(x)
                        .map(|(&k, v)| v.powi(k as i32))
                        .product::<f64>()
            })
            .collect();
        pairwise_sum(&vals)
    }

    /// Terms before combining, which is the sum of coefficients.
    pub fn raw_term_count(&self) -> u128 {
        self.terms.values().map(|&c| c as u128).sum()
    }

    pub fn max_coefficient(&self) -> u64 {
        self.terms.values().copied().max().unwrap_or(0)
    }

    /// One line per term: exponents separated by spaces, then the coefficient.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (alpha, c) in &self.terms {
            let exps: Vec<String> = alpha.iter().map(|k| k.to_string()).collect();
            out.push_str(&format!("{} {}\n", exps.join(" "), c));
        }
        out
    }
}

pub const EXPAND_MAX: usize = 20;

fn shifted(
    poly: &BTreeMap<Vec<u8>, u64>,
    lead: usize,
) -> impl Iterator<Item = (Vec<u8>, u64)> + '_ {
    poly.iter().map(move |(alpha, &c)| {
        let mut full = vec![0u8; lead];
        full.extend_from_slice(alpha);
        (full, c)
    })
}

/// `p_m = (x_1 + x_2) p_{m-1}(x_2, ...) + x_2² p_{m-2}(x_3, ...)`, with
/// `p_1 = x_1` and `p_2 = x_1 x_2 + x_2²`.
pub fn expand_polynomial(m: usize) -> Result<PermanentPolynomial> {
    if m == 0 || m > EXPAND_MAX {
        return Err(LabError::Domain(format!(
            "expansion supports 1 <= m <= {EXPAND_MAX}, got {m}"
        )));
    }
    // tail[k] holds p_k in its own variables.
    let mut tail: Vec<BTreeMap<Vec<u8>, u64>> = vec![BTreeMap::new()];
    tail.push(BTreeMap::from([(vec![1u8], 1u64)]));
    if m >= 2 {
        tail.push(BTreeMap::from([(vec![1u8, 1], 1u64), (vec![0u8, 2], 1u64)]));
    }
    for k in 3..=m {
        let mut p = BTreeMap::new();
        for (mut alpha, c) in shifted(&tail[k - 1], 1) {
            let mut with_x2 = alpha.clone();
            alpha[0] += 1;
            with_x2[1] += 1;
            *p.entry(alpha).or_insert(0) += c;
            *p.entry(with_x2).or_insert(0) += c;
        }
        for (mut alpha, c) in shifted(&tail[k - 2], 2) {
            alpha[1] += 2;
            *p.entry(alpha).or_insert(0) += c;
        }
        tail.push(p);
    }
    Ok(PermanentPolynomial {
        m,
        terms: tail.swap_remove(m),
    })
}

pub const RAW_EXPAND_MAX: usize = 14;

/// `p_m` multiplied out without ever merging like terms: one exponent vector
/// per product term.
pub fn expand_uncombined(m: usize) -> Result<Vec<Vec<u8>>> {
    if m == 0 || m > RAW_EXPAND_MAX {
        return Err(LabError::Domain(format!(
            "raw expansion supports 1 <= m <= {RAW_EXPAND_MAX}, got {m}"
        )));
    }
    let mut tail: Vec<Vec<Vec<u8>>> = vec![vec![], vec![vec![1]]];
    if m >= 2 {
        tail.push(vec![vec![1, 1], vec![0, 2]]);
    }
    for k in 3..=m {
        let mut p = Vec::new();
        for a in &tail[k - 1] {
            for var in [0usize, 1] {
                let mut full = vec![0u8];
                full.extend_from_slice(a);
                full[var] += 1;
                p.push(full);
            }
        }
        for a in &tail[k - 2] {
            let mut full = vec![0u8, 2];
            full.extend_from_slice(a);
            p.push(full);
        }
        tail.push(p);
    }
    Ok(tail.swap_remove(m))
}

/// `γ_1 = 1`, `γ_2 = 2`, `γ_m = 2 γ_{m-1} + γ_{m-2}`.
pub fn gamma_count(m: usize) -> Result<u128> {
    if m == 0 {
        return Err(LabError::Domain("gamma_count needs m >= 1".into()));
    }
    let (mut prev, mut cur) = (1u128, 2u128);
    if m == 1 {
        return Ok(1);
    }
    for _ in 3..=m {
        let next = cur
            .checked_mul(2)
            .and_then(|v| v.checked_add(prev))
            .ok_or_else(|| LabError::Domain(format!("gamma_{m} overflows 128 bits")))?;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// `ln ∫_{simplex} Π g_j^{-p/4} ds = m(1-p/4) ln t + m lnΓ(1-p/4) - lnΓ(m(1-p/4)+1)`.
pub fn ln_dirichlet_det_integral(m: usize, t: f64, p: f64) -> Result<f64> {
    ensure_finite("exponent", p)?;
    if p >= 4.0 {
        return Err(LabError::Divergent(format!(
            "simplex integral diverges for p = {p} >= 4"
        )));
    }
    if p < 0.0 || m == 0 || !(t > 0.0) {
        return Err(LabError::Domain(format!(
            "need m >= 1, t > 0, 0 <= p < 4; got m={m}, t={t}, p={p}"
        )));
    }
    let e = 1.0 - p / 4.0;
    let mf = m as f64;
    Ok(mf * e * t.ln() + mf * lgamma(e) - lgamma(mf * e + 1.0))
}

pub fn dirichlet_det_integral(m: usize, t: f64, p: f64) -> Result<f64> {
    Ok(ln_dirichlet_det_integral(m, t, p)?.exp())
}

/// Proposal distribution on `{0 < s_m < ... < s_1 < t}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampler {
    /// Sorted i.i.d. uniforms, density `m! / t^m`.
    SortedUniform,
    /// Gaps `(g_1..g_m, t - s_1) / t ~ Dirichlet(a, ..., a, 1)`.
    Dirichlet { a: f64 },
}

impl Sampler {
    pub fn name(&self) -> String {
        match self {
            Sampler::SortedUniform => "sorted-uniform".into(),
            Sampler::Dirichlet { a } => format!("dirichlet({a})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexEstimate {
    pub m: usize,
    pub t: f64,
    pub estimate: f64,
    pub se: f64,
    pub n: usize,
    pub sampler: Sampler,
    /// Largest single importance weight over the weight total.
    pub max_weight_share: f64,
}

impl SimplexEstimate {
    pub fn root(&self) -> f64 {
        self.estimate.powf(1.0 / self.m as f64)
    }

    /// `(estimate ± 2 SE)^{1/m}`, clamped at zero.
    pub fn root_interval(&self) -> (f64, f64) {
        let r = 1.0 / self.m as f64;
        (
            (self.estimate - 2.0 * self.se).max(0.0).powf(r),
            (self.estimate + 2.0 * self.se).powf(r),
        )
    }
}

pub const MAX_WEIGHT_SHARE: f64 = 0.25;
const CHUNK: usize = 4096;

/// Importance-sampled `∫_{simplex} f(gaps) ds`.
pub fn simplex_mc<F>(
    m: usize,
    t: f64,
    n: usize,
    seed: u64,
    sampler: Sampler,
    f: F,
) -> Result<SimplexEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if m == 0 || !(t > 0.0) || n < 2 {
        return Err(LabError::Domain(format!(
            "need m >= 1, t > 0, n >= 2; got m={m}, t={t}, n={n}"
        )));
    }
    let (gamma, ln_norm) = match sampler {
        Sampler::SortedUniform => (None, lgamma(m as f64 + 1.0) - m as f64 * t.ln()),
        Sampler::Dirichlet { a } => {
            if !(a > 0.0) || !a.is_finite() {
                return Err(LabError::Domain(format!(
                    "Dirichlet parameter must be positive, got {a}"
                )));
            }
            let g = Gamma::new(a, 1.0).map_err(|e| LabError::Domain(e.to_string()))?;
            let mf = m as f64;
            (
                Some((g, a)),
                lgamma(mf * a + 1.0) - mf * lgamma(a) - mf * t.ln(),
            )
        }
    };
    let n_chunks = n.div_ceil(CHUNK);
    let weights: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = stream_rng(seed, Stream::Simplex, c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            let mut gaps = vec![0.0; m];
            let mut s = vec![0.0; m];
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                let ln_density = match &gamma {
                    None => {
                        for v in s.iter_mut() {
                            *v = t * rng.random::<f64>();
                        }
                        s.sort_by(|x, y| y.total_cmp(x));
                        for j in 0..m {
                            gaps[j] = s[j] - s.get(j + 1).copied().unwrap_or(0.0);
                        }
                        ln_norm
                    }
                    Some((g, a)) => {
                        let mut total = 0.0;
                        for v in gaps.iter_mut() {
                            *v = g.sample(&mut rng);
                            total += *v;
                        }
                        let slack: f64 = -(1.0 - rng.random::<f64>()).ln();
                        total += slack;
                        let mut ln_p = ln_norm;
                        for v in gaps.iter_mut() {
                            *v *= t / total;
                            ln_p += (a - 1.0) * (*v / t).ln();
                        }
                        ln_p
                    }
                };
                let w = if gaps.iter().any(|&g| g <= 0.0) {
                    0.0
                } else {
                    f(&gaps) * (-ln_density).exp()
                };
                out.push(w);
            }
            out
        })
        .collect();
    if let Some(bad) = weights.iter().find(|w| !w.is_finite()) {
        return Err(LabError::NonFinite {
            value: *bad,
            source_name: "simplex weight".into(),
            location: format!("m = {m}"),
        });
    }
    let total = pairwise_sum(&weights);
    let mean = total / n as f64;
    let sq: Vec<f64> = weights.iter().map(|w| (w - mean) * (w - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    let max_w = weights.iter().cloned().fold(0.0, f64::max);
    Ok(SimplexEstimate {
        m,
        t,
        estimate: mean,
        se: (var / n as f64).sqrt(),
        n,
        sampler,
        max_weight_share: if total > 0.0 { max_w / total } else { 0.0 },
    })
}

/// Monte Carlo `∫_{0 < s_m < ... < s_1 < t} |f_m|^β ds`. The default sampler
/// is `Dirichlet(1 - β)`, whose weights have finite variance whenever
/// `β < 1`.
pub fn simplex_integral_beta(
    m: usize,
    t: f64,
    beta: f64,
    n_mc: usize,
    seed: u64,
    sampler: Option<Sampler>,
    base: BaseCase,
) -> Result<SimplexEstimate> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(LabError::Domain(format!(
            "beta must lie in (0, 1), got {beta}"
        )));
    }
    if n_mc < 10_000 {
        return Err(LabError::Domain(format!("need n_mc >= 10000, got {n_mc}")));
    }
    let sampler = sampler.unwrap_or(Sampler::Dirichlet { a: 1.0 - beta });
    let a = match sampler {
        Sampler::SortedUniform => 1.0,
        Sampler::Dirichlet { a } => a,
    };
    // |f_m|^β blows up like g^{-β} in each gap beyond the first (g^{-β/2} when m = 1).
    let singular = if m == 1 { 0.5 * beta } else { beta };
    if 2.0 * singular + a >= 2.0 {
        return Err(LabError::Diagnostic(format!(
            "weights under {} have infinite variance for beta = {beta}; use Dirichlet(a) with a < {}",
            sampler.name(),
            2.0 - 2.0 * singular
        )));
    }
    let est = simplex_mc(m, t, n_mc, seed, sampler, |g| {
        let gv = GapVector { gaps: g.to_vec() };
        permanent_recursive(&gv, base).abs().powf(beta)
    })?;
    if est.max_weight_share > MAX_WEIGHT_SHARE {
        return Err(LabError::Diagnostic(format!(
            "one sample carries {:.1}% of the weight; the tail is too heavy, raise beta or stratify",
            100.0 * est.max_weight_share
        )));
    }
    Ok(est)
}
