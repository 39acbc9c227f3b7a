//! Numerical laboratory for the stochastic heat equation
//! `∂_t u = ∂²_x u + b(u) + Ẇ` on `[0, 1]` with Neumann boundary conditions
//! and a bounded, possibly discontinuous drift `b`.
//!
//! The crate provides the heat kernel, discrete white noise, a semi-implicit
//! solver, estimators of directional Malliavin derivatives, the mollification
//! ladder for discontinuous drifts, local-time estimators for the driftless
//! field and the permanent recursions used to bound local-time moments.

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod drift;
pub mod error;
pub mod grid;
pub mod heat_kernel;
pub mod ladder;
pub mod local_time;
pub mod malliavin;
pub mod noise;
pub mod permanent;
pub mod quadrature;
pub mod reflected;
pub mod rng;
pub mod solver;
pub mod stats;

pub use drift::{Drift, DriftSpec, Smoothness, StepFunction};
pub use error::{LabError, Result};
pub use grid::SpaceTimeGrid;
pub use noise::{CellField, Direction, NoiseRealization};
pub use solver::{solve, solve_linearized, InitialCondition, LinearizedField, SolutionField};
