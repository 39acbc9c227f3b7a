//! Brownian motion on `[0, 1]` reflected at both ends, generated by `∂²_x`
//! (so the free driver has `Var B(t) = 2t`).

use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure_finite, LabError, Result};
use crate::rng::{stream_rng, Stream};

/// Fold `z` into `[0, 1]`: `1 - |1 - (z mod 2)|`.
#[inline]
pub fn reflect(z: f64) -> f64 {
    1.0 - (1.0 - z.rem_euclid(2.0)).abs()
}

/// A sampled reflected path on the uniform grid `r_k = k T / K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub start: f64,
    pub seed: u64,
    pub index: u64,
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
}

/// Number of steps used for horizon `t_end` with target step `dt`.
pub fn path_steps(t_end: f64, dt: f64) -> usize {
    if t_end <= 0.0 {
        0
    } else {
        ((t_end / dt) - 1e-9).ceil().max(1.0) as usize
    }
}

fn validate(x: f64, t_end: f64, dt: f64) -> Result<()> {
    ensure_finite("start", x)?;
    ensure_finite("horizon", t_end)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(LabError::Domain(format!("start {x} lies outside [0, 1]")));
    }
    if t_end < 0.0 {
        return Err(LabError::Domain(format!(
            "horizon must be >= 0, got {t_end}"
        )));
    }
    if !(dt > 0.0) {
        return Err(LabError::Domain(format!(
            "path step must be positive, got {dt}"
        )));
    }
    Ok(())
}

/// Fill `out` (length `steps + 1`) with the positions of path `index`
/// drawn from stream `(seed, index)`.
pub(crate) fn fill_path(x: f64, t_end: f64, seed: u64, index: u64, out: &mut [f64]) {
    let steps = out.len() - 1;
    out[0] = x;
    if steps == 0 {
        return;
    }
    let sd = (2.0 * t_end / steps as f64).sqrt();
    let mut rng = stream_rng(seed, Stream::Path, index);
    let mut free = x;
    for slot in out.iter_mut().skip(1) {
        let z: f64 = StandardNormal.sample(&mut rng);
        free += sd * z;
        *slot = reflect(free);
    }
}

/// Sample path `index` of the stream keyed by `seed`, started at `x`.
pub fn sample_path(x: f64, t_end: f64, dt: f64, seed: u64, index: u64) -> Result<PathSample> {
    validate(x, t_end, dt)?;
    let steps = path_steps(t_end, dt);
    let mut positions = vec![0.0; steps + 1];
    fill_path(x, t_end, seed, index, &mut positions);
    let times = (0..=steps)
        .map(|k| {
            if k == steps {
                t_end
            } else {
                t_end * k as f64 / steps as f64
            }
        })
        .collect();
    Ok(PathSample {
        start: x,
        seed,
        index,
        times,
        positions,
    })
}

/// Increments of the unreflected driver for path `index` (used to check
/// independence of non-overlapping increments).
pub fn driver_increments(t_end: f64, dt: f64, seed: u64, index: u64) -> Vec<f64> {
    let steps = path_steps(t_end, dt);
    let sd = (2.0 * t_end / steps.max(1) as f64).sqrt();
    let mut rng = stream_rng(seed, Stream::Path, index);
    (0..steps)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        })
        .collect()
}
