//! Small statistics toolkit shared by the Monte Carlo studies.
//!
//! Every reduction goes through [`pairwise_sum`] so aggregated results depend
//! only on the order of the input slice, never on thread scheduling.

use rand::Rng;

use crate::rng::{stream_rng, Stream};

/// Pairwise (cascade) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(values) / values.len() as f64
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    pairwise_sum(&dev) / (n - 1) as f64
}

/// Sample mean together with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        let m = mean(values);
        let se = if n > 1 {
            (variance(values) / n as f64).sqrt()
        } else {
            f64::INFINITY
        };
        Self { mean: m, se, n }
    }

    /// `|self - other| <= k * sqrt(se1^2 + se2^2)`.
    pub fn agrees_with(&self, other: &MeanSe, k: f64) -> bool {
        (self.mean - other.mean).abs() <= k * self.se.hypot(other.se)
    }
}

/// Variance estimate with the standard error of a sample variance under a
/// near-Gaussian law, `s^2 sqrt(2 / (n - 1))`.
pub fn variance_with_se(values: &[f64]) -> (f64, f64) {
    let v = variance(values);
    (v, v * (2.0 / (values.len() as f64 - 1.0)).sqrt())
}

/// Sample skewness and excess kurtosis with their large-sample standard
/// errors `sqrt(6/n)` and `sqrt(24/n)`.
#[derive(Debug, Clone, Copy)]
pub struct ShapeStats {
    pub skewness: f64,
    pub skewness_se: f64,
    pub excess_kurtosis: f64,
    pub kurtosis_se: f64,
}

pub fn shape_stats(values: &[f64]) -> ShapeStats {
    let n = values.len() as f64;
    let m = mean(values);
    let d2: Vec<f64> = values.iter().map(|v| (v - m).powi(2)).collect();
    let d3: Vec<f64> = values.iter().map(|v| (v - m).powi(3)).collect();
    let d4: Vec<f64> = values.iter().map(|v| (v - m).powi(4)).collect();
    let m2 = pairwise_sum(&d2) / n;
    let m3 = pairwise_sum(&d3) / n;
    let m4 = pairwise_sum(&d4) / n;
    ShapeStats {
        skewness: m3 / m2.powf(1.5),
        skewness_se: (6.0 / n).sqrt(),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
        kurtosis_se: (24.0 / n).sqrt(),
    }
}

/// Sample Pearson correlation of two equally long slices.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ma = mean(a);
    let mb = mean(b);
    let cross: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let va: Vec<f64> = a.iter().map(|x| (x - ma).powi(2)).collect();
    let vb: Vec<f64> = b.iter().map(|y| (y - mb).powi(2)).collect();
    pairwise_sum(&cross) / (pairwise_sum(&va) * pairwise_sum(&vb)).sqrt()
}

/// Ordinary least squares fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let sxy: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let sxx: Vec<f64> = x.iter().map(|a| (a - mx).powi(2)).collect();
    let slope = pairwise_sum(&sxy) / pairwise_sum(&sxx);
    LinearFit {
        slope,
        intercept: my - slope * mx,
    }
}

/// One-sample Kolmogorov-Smirnov distance against a continuous CDF.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// Percentile bootstrap interval of `statistic` at level `1 - alpha`.
pub fn bootstrap_ci(
    samples: &[f64],
    statistic: impl Fn(&[f64]) -> f64,
    n_boot: usize,
    alpha: f64,
    seed: u64,
) -> (f64, f64) {
    let n = samples.len();
    let mut rng = stream_rng(seed, Stream::Bootstrap, 0);
    let mut buf = vec![0.0; n];
    let mut stats: Vec<f64> = (0..n_boot)
        .map(|_| {
            for slot in buf.iter_mut() {
                *slot = samples[rng.random_range(0..n)];
            }
            statistic(&buf)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let lo = ((alpha / 2.0) * n_boot as f64).floor() as usize;
    let hi = (((1.0 - alpha / 2.0) * n_boot as f64).ceil() as usize).min(n_boot) - 1;
    (stats[lo], stats[hi])
}
