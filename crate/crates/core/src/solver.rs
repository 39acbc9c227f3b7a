//! Semi-implicit finite-difference scheme for
//! `∂_t u = ∂²_x u + b(u) + Ẇ` on `[0, T] x [0, 1]` with Neumann boundary
//! conditions.
//!
//! One step reads
//!
//! ```text
//! (I - dt Δ_h) u^{i+1} = u^i + dt b(u^i) + F(ΔW_i)
//! ```
//!
//! where `Δ_h` is the second difference with mirrored ghost nodes
//! (`u_{-1} = u_1`) and `F` spreads each cell increment half onto each of
//! its two nodes, divided by the node's control volume (`dx` inside, `dx/2`
//! at the walls). Source terms of the linearized equation go through the same
//! `F`, so Cameron-Martin shifts of the noise and the linearized solve see
//! identical discrete forcing.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use crate::drift::DriftSpec;
use crate::error::{LabError, Result};
use crate::grid::SpaceTimeGrid;
use crate::noise::{read8, same_grid, CellField, Direction, NoiseRealization};

/// Initial condition `u_0`, continuous on `[0, 1]`.
#[derive(Clone)]
pub struct InitialCondition {
    name: String,
    func: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for InitialCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "InitialCondition({})", self.name)
    }
}

impl InitialCondition {
    pub fn new(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            func: Arc::new(f),
        }
    }

    pub fn zero() -> Self {
        Self::new("zero", |_| 0.0)
    }

    /// `cos(πx)`, compatible with the Neumann condition.
    pub fn cos_pi() -> Self {
        Self::new("cos(pi x)", |x| (std::f64::consts::PI * x).cos())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.func)(x)
    }
}

/// LU factors of the constant tridiagonal matrix `I - dt Δ_h`.
#[derive(Debug, Clone)]
pub(crate) struct ImplicitDiffusion {
    lower: Vec<f64>,
    upper_mod: Vec<f64>,
    denom: Vec<f64>,
}

impl ImplicitDiffusion {
    pub(crate) fn new(grid: &SpaceTimeGrid) -> Result<Self> {
        let n = grid.nx() + 1;
        let r = grid.dt() / (grid.dx() * grid.dx());
        let diag = 1.0 + 2.0 * r;
        let mut lower = vec![-r; n];
        let mut upper = vec![-r; n];
        lower[0] = 0.0;
        upper[0] = -2.0 * r;
        lower[n - 1] = -2.0 * r;
        upper[n - 1] = 0.0;
        let mut upper_mod = vec![0.0; n];
        let mut denom = vec![0.0; n];
        for j in 0..n {
            let d = if j == 0 {
                diag
            } else {
                diag - lower[j] * upper_mod[j - 1]
            };
            if !(d > 0.0) || !d.is_finite() {
                return Err(LabError::LinearAlgebra(format!(
                    "implicit diffusion matrix is singular at row {j} (pivot {d})"
                )));
            }
            denom[j] = d;
            upper_mod[j] = upper[j] / d;
        }
        Ok(Self {
            lower,
            upper_mod,
            denom,
        })
    }

    /// Overwrite `rhs` with the solution of `(I - dt Δ_h) x = rhs`.
    pub(crate) fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        rhs[0] /= self.denom[0];
        for j in 1..n {
            rhs[j] = (rhs[j] - self.lower[j] * rhs[j - 1]) / self.denom[j];
        }
        for j in (0..n - 1).rev() {
            rhs[j] -= self.upper_mod[j] * rhs[j + 1];
        }
    }
}

/// Add the nodal forcing of one row of cell quantities to `out`.
#[inline]
pub(crate) fn add_node_forcing(cells: &[f64], dx: f64, scale: f64, out: &mut [f64]) {
    let nx = cells.len();
    let s = scale / dx;
    out[0] += s * cells[0];
    for j in 1..nx {
        out[j] += 0.5 * s * (cells[j - 1] + cells[j]);
    }
    out[nx] += s * cells[nx - 1];
}

/// Grid values `u(t_i, x_j)` of one solution path.
#[derive(Debug, Clone)]
pub struct SolutionField {
    grid: SpaceTimeGrid,
    values: Vec<f64>,
    drift: DriftSpec,
    seed: u64,
    u0_name: String,
}

impl SolutionField {
    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn drift(&self) -> &DriftSpec {
        &self.drift
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn u0_name(&self) -> &str {
        &self.u0_name
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.grid.nx() + 1;
        &self.values[i * w..(i + 1) * w]
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * (self.grid.nx() + 1) + j]
    }

    /// Value at a grid node given by coordinates.
    pub fn at_node(&self, t: f64, x: f64) -> Result<f64> {
        let (i, j) = self.grid.probe_index(t, x)?;
        Ok(self.value(i, j))
    }

    /// Bilinear interpolation at `(t, x)`, clamped to the domain.
    pub fn interpolate(&self, t: f64, x: f64) -> f64 {
        bilinear(&self.grid, &self.values, t, x)
    }

    /// Long-format CSV with columns `t,x,u`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(
            w,
            "# drift={} u0={} seed={}",
            self.drift.name(),
            self.u0_name,
            self.seed
        )?;
        writeln!(w, "t,x,u")?;
        for i in 0..=self.grid.nt() {
            for j in 0..=self.grid.nx() {
                writeln!(
                    w,
                    "{},{},{}",
                    self.grid.time(i),
                    self.grid.space(j),
                    self.value(i, j)
                )?;
            }
        }
        Ok(())
    }

    /// Binary replay record: magic, grid, noise seed, drift and initial
    /// condition names, then the values row-major as little-endian `f64`.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&self.grid.t_end().to_le_bytes())?;
        w.write_all(&(self.grid.nt() as u64).to_le_bytes())?;
        w.write_all(&(self.grid.nx() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for s in [self.drift.name(), self.u0_name.as_str()] {
            w.write_all(&(s.len() as u64).to_le_bytes())?;
            w.write_all(s.as_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

const FIELD_MAGIC: &[u8; 8] = b"SPDEFLD1";

/// Contents of a binary field record. The drift is identified by name only;
/// replaying means regenerating the noise from `seed` and solving again.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredField {
    pub grid: SpaceTimeGrid,
    pub seed: u64,
    pub drift_name: String,
    pub u0_name: String,
    pub values: Vec<f64>,
}

impl StoredField {
    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(LabError::Format("not a field record (bad magic)".into()));
        }
        let t_end = f64::from_le_bytes(read8(&mut r)?);
        let nt = u64::from_le_bytes(read8(&mut r)?) as usize;
        let nx = u64::from_le_bytes(read8(&mut r)?) as usize;
        let seed = u64::from_le_bytes(read8(&mut r)?);
        let grid = SpaceTimeGrid::new(t_end, nt, nx)?;
        let mut names = Vec::new();
        for _ in 0..2 {
            let len = u64::from_le_bytes(read8(&mut r)?) as usize;
            if len > 1 << 16 {
                return Err(LabError::Format(format!(
                    "name length {len} is implausible"
                )));
            }
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            names.push(String::from_utf8(buf).map_err(|e| LabError::Format(e.to_string()))?);
        }
        let n = (nt + 1) * (nx + 1);
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(f64::from_le_bytes(read8(&mut r)?));
        }
        let u0_name = names.pop().unwrap();
        let drift_name = names.pop().unwrap();
        Ok(Self {
            grid,
            seed,
            drift_name,
            u0_name,
            values,
        })
    }
}

fn bilinear(grid: &SpaceTimeGrid, values: &[f64], t: f64, x: f64) -> f64 {
    let w = grid.nx() + 1;
    let ft = (t / grid.dt()).clamp(0.0, grid.nt() as f64);
    let fx = (x / grid.dx()).clamp(0.0, grid.nx() as f64);
    let i = (ft.floor() as usize).min(grid.nt() - 1);
    let j = (fx.floor() as usize).min(grid.nx() - 1);
    let (a, b) = (ft - i as f64, fx - j as f64);
    let v00 = values[i * w + j];
    let v01 = values[i * w + j + 1];
    let v10 = values[(i + 1) * w + j];
    let v11 = values[(i + 1) * w + j + 1];
    (1.0 - a) * ((1.0 - b) * v00 + b * v01) + a * ((1.0 - b) * v10 + b * v11)
}

/// Solve the drifted equation for one noise realization.
pub fn solve(
    grid: &SpaceTimeGrid,
    drift: &DriftSpec,
    u0: &InitialCondition,
    noise: &NoiseRealization,
) -> Result<SolutionField> {
    same_grid(grid, noise.grid())?;
    let (nt, nx) = (grid.nt(), grid.nx());
    let (dt, dx) = (grid.dt(), grid.dx());
    let w = nx + 1;
    let lu = ImplicitDiffusion::new(grid)?;
    let mut values = vec![0.0; (nt + 1) * w];
    for j in 0..w {
        let v = u0.eval(grid.space(j));
        if !v.is_finite() {
            return Err(LabError::NonFinite {
                value: v,
                source_name: format!("initial condition {}", u0.name()),
                location: format!("x = {}", grid.space(j)),
            });
        }
        values[j] = v;
    }
    let mut next = vec![0.0; w];
    for i in 0..nt {
        let current = &values[i * w..(i + 1) * w];
        for (j, (slot, &u)) in next.iter_mut().zip(current).enumerate() {
            let b = drift.eval(u);
            if !b.is_finite() {
                return Err(LabError::NonFinite {
                    value: b,
                    source_name: format!("drift {}", drift.name()),
                    location: format!("u = {u} at (t, x) = ({}, {})", grid.time(i), grid.space(j)),
                });
            }
            *slot = u + dt * b;
        }
        add_node_forcing(noise.row(i), dx, 1.0, &mut next);
        lu.solve_in_place(&mut next);
        values[(i + 1) * w..(i + 2) * w].copy_from_slice(&next);
    }
    Ok(SolutionField {
        grid: *grid,
        values,
        drift: drift.clone(),
        seed: noise.seed(),
        u0_name: u0.name().to_string(),
    })
}

/// Solution `v` of the linearized equation
/// `∂_t v = ∂²_x v + b'(u) v + h`, `v(0, ·) = 0`.
#[derive(Debug, Clone)]
pub struct LinearizedField {
    grid: SpaceTimeGrid,
    values: Vec<f64>,
}

impl LinearizedField {
    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * (self.grid.nx() + 1) + j]
    }

    pub fn at_node(&self, t: f64, x: f64) -> Result<f64> {
        let (i, j) = self.grid.probe_index(t, x)?;
        Ok(self.value(i, j))
    }
}

/// Linearize around `base` using the derivative of its own (C¹) drift.
pub fn solve_linearized(base: &SolutionField, h: &Direction) -> Result<LinearizedField> {
    let drift = base.drift();
    if !drift.is_c1() {
        return Err(LabError::Domain(format!(
            "linearized solve needs a C1 drift, {} is {:?}",
            drift.name(),
            drift.smoothness()
        )));
    }
    let d = drift.clone();
    solve_linearized_with(base, move |u| d.derivative(u).unwrap_or(f64::NAN), h)
}

/// Linearize around `base` with an explicit multiplier `b'`.
pub fn solve_linearized_with(
    base: &SolutionField,
    bprime: impl Fn(f64) -> f64,
    h: &Direction,
) -> Result<LinearizedField> {
    let grid = base.grid;
    solve_linearized_cells(base, bprime, &h.cells(&grid))
}

pub(crate) fn solve_linearized_cells(
    base: &SolutionField,
    bprime: impl Fn(f64) -> f64,
    h: &CellField,
) -> Result<LinearizedField> {
    let grid = base.grid;
    same_grid(&grid, h.grid())?;
    let (nt, nx) = (grid.nt(), grid.nx());
    let (dt, dx) = (grid.dt(), grid.dx());
    let w = nx + 1;
    let lu = ImplicitDiffusion::new(&grid)?;
    let mut values = vec![0.0; (nt + 1) * w];
    let mut next = vec![0.0; w];
    for i in 0..nt {
        let u_row = base.row(i);
        let v_row = &values[i * w..(i + 1) * w];
        for j in 0..w {
            let m = bprime(u_row[j]);
            if !m.is_finite() {
                return Err(LabError::NonFinite {
                    value: m,
                    source_name: format!("derivative of drift {}", base.drift.name()),
                    location: format!("u = {}", u_row[j]),
                });
            }
            next[j] = v_row[j] * (1.0 + dt * m);
        }
        // Same nodal spreading as a shift of the noise by h dt dx.
        add_node_forcing(h.row(i), dx, dt * dx, &mut next);
        lu.solve_in_place(&mut next);
        values[(i + 1) * w..(i + 2) * w].copy_from_slice(&next);
    }
    Ok(LinearizedField { grid, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_drift_without_noise_is_linear_in_time() {
        let g = SpaceTimeGrid::new(1.0, 64, 16).unwrap();
        let f = solve(
            &g,
            &DriftSpec::constant(0.7),
            &InitialCondition::zero(),
            &NoiseRealization::zeros(g),
        )
        .unwrap();
        for i in 0..=g.nt() {
            for j in 0..=g.nx() {
                assert!((f.value(i, j) - 0.7 * g.time(i)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn first_row_is_initial_condition() {
        let g = SpaceTimeGrid::new(1.0, 8, 8).unwrap();
        let n = NoiseRealization::sample(g, 3);
        let f = solve(&g, &DriftSpec::sign(), &InitialCondition::cos_pi(), &n).unwrap();
        for j in 0..=8 {
            assert_eq!(f.value(0, j), (std::f64::consts::PI * g.space(j)).cos());
        }
    }

    #[test]
    fn non_finite_drift_is_named() {
        let g = SpaceTimeGrid::new(1.0, 8, 8).unwrap();
        let d =
            DriftSpec::from_fn("blowup", 1.0, |u| if u > 0.5 { f64::NAN } else { 0.0 }).unwrap();
        let err = solve(
            &g,
            &d,
            &InitialCondition::cos_pi(),
            &NoiseRealization::zeros(g),
        )
        .unwrap_err();
        match err {
            LabError::NonFinite { source_name, .. } => assert!(source_name.contains("blowup")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_source_gives_zero_linearization() {
        let g = SpaceTimeGrid::new(1.0, 32, 16).unwrap();
        let n = NoiseRealization::sample(g, 1);
        let f = solve(
            &g,
            &DriftSpec::smooth_sine(1.0),
            &InitialCondition::zero(),
            &n,
        )
        .unwrap();
        let v = solve_linearized(&f, &Direction::zero()).unwrap();
        assert!(v.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn linearization_needs_c1() {
        let g = SpaceTimeGrid::new(1.0, 8, 8).unwrap();
        let f = solve(
            &g,
            &DriftSpec::sign(),
            &InitialCondition::zero(),
            &NoiseRealization::zeros(g),
        )
        .unwrap();
        assert!(solve_linearized(&f, &Direction::constant(1.0, 1.0)).is_err());
    }

    #[test]
    fn noise_grid_must_match() {
        let g = SpaceTimeGrid::new(1.0, 8, 8).unwrap();
        let other = SpaceTimeGrid::new(1.0, 16, 8).unwrap();
        assert!(solve(
            &g,
            &DriftSpec::zero(),
            &InitialCondition::zero(),
            &NoiseRealization::zeros(other)
        )
        .is_err());
    }

    #[test]
    fn binary_record_roundtrip() {
        let g = SpaceTimeGrid::new(0.5, 6, 4).unwrap();
        let f = solve(
            &g,
            &DriftSpec::sign(),
            &InitialCondition::cos_pi(),
            &NoiseRealization::sample(g, 8),
        )
        .unwrap();
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        let s = StoredField::read_from(buf.as_slice()).unwrap();
        assert_eq!(s.values, f.values());
        assert_eq!(s.seed, 8);
        assert_eq!(s.drift_name, "sign");
    }

    #[test]
    fn interpolation_reproduces_nodes() {
        let g = SpaceTimeGrid::new(1.0, 10, 10).unwrap();
        let f = solve(
            &g,
            &DriftSpec::zero(),
            &InitialCondition::zero(),
            &NoiseRealization::sample(g, 4),
        )
        .unwrap();
        assert_eq!(f.interpolate(g.time(3), g.space(7)), f.value(3, 7));
        assert_eq!(f.interpolate(1.0, 1.0), f.value(10, 10));
    }
}
