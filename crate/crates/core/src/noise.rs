//! Discrete space-time white noise, Cameron-Martin shifts and Wiener
//! integrals.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::grid::SpaceTimeGrid;
use crate::rng::{stream_rng, Stream};
use crate::stats::pairwise_sum;

/// A real function on the noise cells of a grid, stored row-major `nt x nx`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    grid: SpaceTimeGrid,
    values: Vec<f64>,
}

impl CellField {
    pub fn new(grid: SpaceTimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(LabError::GridMismatch(format!(
                "cell field has {} values, grid has {} cells",
                values.len(),
                grid.n_cells()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: SpaceTimeGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_cells()],
        }
    }

    /// Evaluate `f(t, x)` at every cell midpoint.
    pub fn from_fn(grid: SpaceTimeGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.n_cells());
        for i in 0..grid.nt() {
            for j in 0..grid.nx() {
                let (t, x) = grid.cell_center(i, j);
                values.push(f(t, x));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let nx = self.grid.nx();
        &self.values[i * nx..(i + 1) * nx]
    }

    /// `Σ f² dt dx`.
    pub fn l2_norm_squared(&self) -> f64 {
        let sq: Vec<f64> = self.values.iter().map(|v| v * v).collect();
        pairwise_sum(&sq) * self.grid.dt() * self.grid.dx()
    }

    /// `Σ f g dt dx`.
    pub fn inner(&self, other: &CellField) -> Result<f64> {
        same_grid(&self.grid, &other.grid)?;
        let p: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        Ok(pairwise_sum(&p) * self.grid.dt() * self.grid.dx())
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &CellField, b: f64) -> Result<CellField> {
        same_grid(&self.grid, &other.grid)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(CellField {
            grid: self.grid,
            values,
        })
    }
}

pub(crate) fn same_grid(a: &SpaceTimeGrid, b: &SpaceTimeGrid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(LabError::GridMismatch(format!("{a:?} vs {b:?}")))
    }
}

type SpaceTimeFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// A Cameron-Martin direction `h ∈ L²([0,T] x [0,1])`.
#[derive(Clone)]
pub struct Direction {
    name: String,
    func: Arc<SpaceTimeFn>,
    l2_norm: f64,
}

impl fmt::Debug for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Direction")
            .field("name", &self.name)
            .field("l2_norm", &self.l2_norm)
            .finish()
    }
}

impl Direction {
    /// Build a direction on `[0, t_end] x [0, 1]`; the norm is computed by a
    /// 1024 x 1024 midpoint rule.
    pub fn new(
        name: impl Into<String>,
        t_end: f64,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let l2_norm = midpoint_l2_norm(&f, t_end, 1024);
        Self {
            name: name.into(),
            func: Arc::new(f),
            l2_norm,
        }
    }

    /// Build a direction whose `L²` norm is known in closed form.
    pub fn with_norm(
        name: impl Into<String>,
        l2_norm: f64,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            func: Arc::new(f),
            l2_norm,
        }
    }

    pub fn zero() -> Self {
        Self::with_norm("zero", 0.0, |_, _| 0.0)
    }

    /// `h ≡ c` on `[0, t_end] x [0, 1]`.
    pub fn constant(c: f64, t_end: f64) -> Self {
        Self::with_norm(
            format!("constant({c})"),
            c.abs() * t_end.sqrt(),
            move |_, _| c,
        )
    }

    /// Smooth bump `exp(-(x - center)² / (2 width²))`, constant in time,
    /// rescaled to unit `L²` norm on `[0, t_end] x [0, 1]`.
    pub fn unit_bump(center: f64, width: f64, t_end: f64) -> Self {
        let raw = move |_: f64, x: f64| (-(x - center).powi(2) / (2.0 * width * width)).exp();
        let norm = midpoint_l2_norm(&raw, t_end, 1024);
        let scale = 1.0 / norm;
        Self::with_norm(format!("bump({center},{width})"), 1.0, move |t, x| {
            scale * raw(t, x)
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm
    }

    pub fn eval(&self, t: f64, x: f64) -> f64 {
        (self.func)(t, x)
    }

    pub fn cells(&self, grid: &SpaceTimeGrid) -> CellField {
        CellField::from_fn(*grid, |t, x| self.eval(t, x))
    }

    /// `scale * h`.
    pub fn scaled(&self, scale: f64) -> Direction {
        let f = self.func.clone();
        Direction {
            name: format!("{scale}*{}", self.name),
            func: Arc::new(move |t, x| scale * f(t, x)),
            l2_norm: scale.abs() * self.l2_norm,
        }
    }

    /// `a * self + other`; the norm is recomputed numerically.
    pub fn add_scaled(&self, a: f64, other: &Direction, t_end: f64) -> Direction {
        let f = self.func.clone();
        let g = other.func.clone();
        Direction::new(
            format!("{a}*{}+{}", self.name, other.name),
            t_end,
            move |t, x| a * f(t, x) + g(t, x),
        )
    }
}

fn midpoint_l2_norm(f: &dyn Fn(f64, f64) -> f64, t_end: f64, n: usize) -> f64 {
    let (ht, hx) = (t_end / n as f64, 1.0 / n as f64);
    let sq: Vec<f64> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            f((i as f64 + 0.5) * ht, (j as f64 + 0.5) * hx).powi(2)
        })
        .collect();
    (pairwise_sum(&sq) * ht * hx).sqrt()
}

/// One seeded draw of the discrete white noise: cell `(i, j)` holds
/// `W([t_i, t_{i+1}] x [x_j, x_{j+1}]) ~ N(0, dt dx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    grid: SpaceTimeGrid,
    seed: u64,
    increments: Vec<f64>,
}

impl NoiseRealization {
    /// Row `i` is generated from its own counter stream, so the result is
    /// independent of how rows are scheduled across threads.
    pub fn sample(grid: SpaceTimeGrid, seed: u64) -> Self {
        let nx = grid.nx();
        let sd = (grid.dt() * grid.dx()).sqrt();
        let mut increments = vec![0.0; grid.n_cells()];
        increments
            .par_chunks_mut(nx)
            .enumerate()
            .for_each(|(i, row)| {
                let mut rng = stream_rng(seed, Stream::Noise, i as u64);
                for v in row.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = sd * z;
                }
            });
        Self {
            grid,
            seed,
            increments,
        }
    }

    /// Noise identically zero (deterministic runs).
    pub fn zeros(grid: SpaceTimeGrid) -> Self {
        Self {
            grid,
            seed: 0,
            increments: vec![0.0; grid.n_cells()],
        }
    }

    pub fn from_increments(grid: SpaceTimeGrid, seed: u64, increments: Vec<f64>) -> Result<Self> {
        if increments.len() != grid.n_cells() {
            return Err(LabError::GridMismatch(format!(
                "{} increments for a grid with {} cells",
                increments.len(),
                grid.n_cells()
            )));
        }
        Ok(Self {
            grid,
            seed,
            increments,
        })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let nx = self.grid.nx();
        &self.increments[i * nx..(i + 1) * nx]
    }

    /// Cameron-Martin shift `W -> W + eps * h`.
    pub fn shift(&self, h: &Direction, eps: f64) -> Self {
        self.shift_cells(&h.cells(&self.grid), eps)
            .expect("direction cells are built on the noise grid")
    }

    /// Shift by a direction already evaluated on the cells.
    pub fn shift_cells(&self, h: &CellField, eps: f64) -> Result<Self> {
        same_grid(&self.grid, h.grid())?;
        let w = eps * self.grid.dt() * self.grid.dx();
        let increments = self
            .increments
            .iter()
            .zip(h.values())
            .map(|(dw, hv)| dw + w * hv)
            .collect();
        Ok(Self {
            grid: self.grid,
            seed: self.seed,
            increments,
        })
    }

    /// `Σ_{i,j} kernel(i,j) * ΔW(i,j)`.
    pub fn wiener_integral(&self, kernel: &CellField) -> Result<f64> {
        same_grid(&self.grid, kernel.grid())?;
        let p: Vec<f64> = self
            .increments
            .iter()
            .zip(kernel.values())
            .map(|(dw, k)| dw * k)
            .collect();
        Ok(pairwise_sum(&p))
    }

    /// Binary replay format: magic, `T`, `nt`, `nx`, seed, then the
    /// increments as row-major little-endian `f64`.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(NOISE_MAGIC)?;
        w.write_all(&self.grid.t_end().to_le_bytes())?;
        w.write_all(&(self.grid.nt() as u64).to_le_bytes())?;
        w.write_all(&(self.grid.nx() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for v in &self.increments {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != NOISE_MAGIC {
            return Err(LabError::Format("not a noise dump (bad magic)".into()));
        }
        let t_end = f64::from_le_bytes(read8(&mut r)?);
        let nt = u64::from_le_bytes(read8(&mut r)?) as usize;
        let nx = u64::from_le_bytes(read8(&mut r)?) as usize;
        let seed = u64::from_le_bytes(read8(&mut r)?);
        let grid = SpaceTimeGrid::new(t_end, nt, nx)?;
        let mut increments = Vec::with_capacity(grid.n_cells());
        for _ in 0..grid.n_cells() {
            increments.push(f64::from_le_bytes(read8(&mut r)?));
        }
        Ok(Self {
            grid,
            seed,
            increments,
        })
    }
}

const NOISE_MAGIC: &[u8; 8] = b"SPDENOI1";

pub(crate) fn read8(r: &mut impl Read) -> Result<[u8; 8]> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(b)
}
