use crate::error::{ensure_finite, LabError, Result};

/// Uniform discretization of `[0, T] x [0, 1]`.
///
/// Time nodes are `t_i = i * dt` for `i = 0..=nt` and space nodes
/// `x_j = j * dx` for `j = 0..=nx`. Noise lives on the `nt x nx` cells between
/// nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTimeGrid {
    t_end: f64,
    nt: usize,
    nx: usize,
}

impl SpaceTimeGrid {
    pub fn new(t_end: f64, nt: usize, nx: usize) -> Result<Self> {
        ensure_finite("horizon T", t_end)?;
        if t_end <= 0.0 {
            return Err(LabError::Domain(format!(
                "horizon T must be positive, got {t_end}"
            )));
        }
        if nt < 2 || nx < 2 {
            return Err(LabError::Domain(format!(
                "grid needs nt, nx >= 2, got nt = {nt}, nx = {nx}"
            )));
        }
        Ok(Self { t_end, nt, nx })
    }

    /// `T = 1`, `nt = 512`, `nx = 64`.
    pub fn default_grid() -> Self {
        Self {
            t_end: 1.0,
            nt: 512,
            nx: 64,
        }
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.nt as f64
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.nt {
            self.t_end
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn space(&self, j: usize) -> f64 {
        if j == self.nx {
            1.0
        } else {
            j as f64 * self.dx()
        }
    }

    /// Midpoint of noise cell `(i, j)`.
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.dt(), (j as f64 + 0.5) * self.dx())
    }

    pub fn n_cells(&self) -> usize {
        self.nt * self.nx
    }

    /// Index of the time node equal to `t` (to rounding).
    pub fn time_index(&self, t: f64) -> Result<usize> {
        snap(t / self.dt(), self.nt).ok_or_else(|| {
            LabError::Domain(format!(
                "time {t} is not a node of the grid (dt = {})",
                self.dt()
            ))
        })
    }

    /// Index of the space node equal to `x` (to rounding).
    pub fn space_index(&self, x: f64) -> Result<usize> {
        snap(x / self.dx(), self.nx).ok_or_else(|| {
            LabError::Domain(format!(
                "position {x} is not a node of the grid (dx = {})",
                self.dx()
            ))
        })
    }

    pub fn probe_index(&self, t: f64, x: f64) -> Result<(usize, usize)> {
        Ok((self.time_index(t)?, self.space_index(x)?))
    }
}

fn snap(scaled: f64, max: usize) -> Option<usize> {
    if !scaled.is_finite() {
        return None;
    }
    let k = scaled.round();
    if (scaled - k).abs() > 1e-8 || k < 0.0 || k > max as f64 {
        return None;
    }
    Some(k as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_cover_the_domain_exactly() {
        let g = SpaceTimeGrid::new(0.7, 7, 3).unwrap();
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(7), 0.7);
        assert_eq!(g.space(0), 0.0);
        assert_eq!(g.space(3), 1.0);
        assert!(g.dt() * g.dx() > 0.0);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(SpaceTimeGrid::new(1.0, 1, 10).is_err());
        assert!(SpaceTimeGrid::new(1.0, 10, 1).is_err());
        assert!(SpaceTimeGrid::new(0.0, 10, 10).is_err());
        assert!(SpaceTimeGrid::new(f64::NAN, 10, 10).is_err());
    }

    #[test]
    fn probe_snapping() {
        let g = SpaceTimeGrid::default_grid();
        assert_eq!(g.probe_index(0.5, 0.5).unwrap(), (256, 32));
        assert!(g.space_index(0.501).is_err());
        assert!(g.time_index(1.5).is_err());
    }
}
