//! Bounded drift coefficients `b: ℝ -> ℝ`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{LabError, Result};

/// A scalar drift. Implementors that are continuously differentiable return
/// their derivative from [`Drift::derivative`].
pub trait Drift: Send + Sync {
    fn value(&self, x: f64) -> f64;

    fn derivative(&self, _x: f64) -> Option<f64> {
        None
    }

    /// Piecewise-constant drifts expose their jumps, which lets the
    /// mollification ladder use exact convolution formulas.
    fn as_steps(&self) -> Option<&StepFunction> {
        None
    }
}

/// Regularity class declared for a drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoothness {
    Measurable,
    Lipschitz(f64),
    /// Continuously differentiable with an evaluable derivative.
    C1,
}

/// A drift together with its declared sup-norm and smoothness class.
#[derive(Clone)]
pub struct DriftSpec {
    name: String,
    sup_norm: f64,
    smoothness: Smoothness,
    func: Arc<dyn Drift>,
}

impl fmt::Debug for DriftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftSpec")
            .field("name", &self.name)
            .field("sup_norm", &self.sup_norm)
            .field("smoothness", &self.smoothness)
            .finish()
    }
}

struct FnDrift<F, D> {
    f: F,
    df: Option<D>,
}

impl<F, D> Drift for FnDrift<F, D>
where
    F: Fn(f64) -> f64 + Send + Sync,
    D: Fn(f64) -> f64 + Send + Sync,
{
    fn value(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    fn derivative(&self, x: f64) -> Option<f64> {
        self.df.as_ref().map(|d| d(x))
    }
}

impl DriftSpec {
    pub fn new(
        name: impl Into<String>,
        sup_norm: f64,
        smoothness: Smoothness,
        func: Arc<dyn Drift>,
    ) -> Result<Self> {
        if !(sup_norm >= 0.0) || !sup_norm.is_finite() {
            return Err(LabError::Domain(format!(
                "sup-norm must be finite and >= 0, got {sup_norm}"
            )));
        }
        if smoothness == Smoothness::C1 && func.derivative(0.0).is_none() {
            return Err(LabError::Domain(
                "C1 drift must provide its derivative".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            sup_norm,
            smoothness,
            func,
        })
    }

    /// Measurable drift from a closure.
    pub fn from_fn(
        name: impl Into<String>,
        sup_norm: f64,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let func = Arc::new(FnDrift {
            f,
            df: None::<fn(f64) -> f64>,
        });
        Self::new(name, sup_norm, Smoothness::Measurable, func)
    }

    /// C¹ drift from a value closure and a derivative closure.
    pub fn smooth(
        name: impl Into<String>,
        sup_norm: f64,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let func = Arc::new(FnDrift { f, df: Some(df) });
        Self::new(name, sup_norm, Smoothness::C1, func)
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn constant(c: f64) -> Self {
        Self::smooth(format!("constant({c})"), c.abs(), move |_| c, |_| 0.0)
            .expect("constant drift is valid")
    }

    /// `sign(x)`, with `sign(0) = 0`.
    pub fn sign() -> Self {
        let steps = StepFunction::new(vec![0.0], vec![-1.0, 1.0]).expect("valid steps");
        Self::new("sign", 1.0, Smoothness::Measurable, Arc::new(steps)).expect("valid drift")
    }

    /// `1_{x > 0}`; the value at the jump is the midpoint `1/2`.
    pub fn step() -> Self {
        let steps = StepFunction::new(vec![0.0], vec![0.0, 1.0]).expect("valid steps");
        Self::new("step", 1.0, Smoothness::Measurable, Arc::new(steps)).expect("valid drift")
    }

    /// `±1` alternating on the dyadic intervals of width `2^-level` tiling
    /// `[-1, 1]`, `+1` to the left of `-1` and continuing the last sign to
    /// the right of `1`.
    pub fn comb(level: u32) -> Result<Self> {
        if level > 16 {
            return Err(LabError::Domain(format!("comb level {level} exceeds 16")));
        }
        let pieces = 2usize << level;
        let width = 2.0 / pieces as f64;
        let breakpoints: Vec<f64> = (0..=pieces).map(|k| -1.0 + k as f64 * width).collect();
        let mut values = vec![1.0];
        values.extend((0..pieces).map(|k| if k % 2 == 0 { -1.0 } else { 1.0 }));
        values.push(*values.last().unwrap());
        let steps = StepFunction::new(breakpoints, values)?;
        Self::new(
            format!("comb({level})"),
            1.0,
            Smoothness::Measurable,
            Arc::new(steps),
        )
    }

    /// `amplitude * sin(x)`.
    pub fn smooth_sine(amplitude: f64) -> Self {
        Self::smooth(
            format!("smooth-sine({amplitude})"),
            amplitude.abs(),
            move |x| amplitude * x.sin(),
            move |x| amplitude * x.cos(),
        )
        .expect("valid drift")
    }

    /// `amplitude * (2/π) * atan(x / scale)`, sup-norm `|amplitude|`.
    pub fn arctan(amplitude: f64, scale: f64) -> Self {
        let k = 2.0 * amplitude / PI;
        Self::smooth(
            format!("arctan({amplitude},{scale})"),
            amplitude.abs(),
            move |x| k * (x / scale).atan(),
            move |x| k / (scale * (1.0 + (x / scale).powi(2))),
        )
        .expect("valid drift")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    pub fn func(&self) -> &Arc<dyn Drift> {
        &self.func
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.func.value(x)
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> Option<f64> {
        self.func.derivative(x)
    }

    pub fn is_c1(&self) -> bool {
        self.smoothness == Smoothness::C1
    }

    /// Spot-check `|b(x)| <= sup_norm` on `points`.
    pub fn check_sup_norm(&self, points: &[f64]) -> Result<()> {
        for &x in points {
            let v = self.eval(x);
            if !(v.abs() <= self.sup_norm * (1.0 + 1e-12) + 1e-12) {
                return Err(LabError::Domain(format!(
                    "drift {} has |b({x})| = {} above declared sup-norm {}",
                    self.name,
                    v.abs(),
                    self.sup_norm
                )));
            }
        }
        Ok(())
    }

    /// For C¹ drifts, compare `b'` with a central difference of step `h`.
    pub fn check_derivative(&self, points: &[f64], h: f64, tol: f64) -> Result<()> {
        if !self.is_c1() {
            return Ok(());
        }
        for &x in points {
            let fd = (self.eval(x + h) - self.eval(x - h)) / (2.0 * h);
            let d = self.derivative(x).unwrap_or(f64::NAN);
            if !((fd - d).abs() <= tol) {
                return Err(LabError::Domain(format!(
                    "drift {}: b'({x}) = {d} but central difference gives {fd}",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Piecewise-constant function with jumps at sorted `breakpoints`;
/// `values[k]` holds on `(breakpoints[k-1], breakpoints[k])`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != breakpoints.len() + 1 {
            return Err(LabError::Domain(format!(
                "{} breakpoints need {} values, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                values.len()
            )));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(LabError::Domain(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            breakpoints,
            values,
        })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(location, jump size)` for every breakpoint.
    pub fn jumps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.breakpoints
            .iter()
            .enumerate()
            .map(|(k, &a)| (a, self.values[k + 1] - self.values[k]))
    }
}

impl Drift for StepFunction {
    fn value(&self, x: f64) -> f64 {
        let k = self.breakpoints.partition_point(|&a| a < x);
        if k < self.breakpoints.len() && self.breakpoints[k] == x {
            0.5 * (self.values[k] + self.values[k + 1])
        } else {
            self.values[k]
        }
    }

    fn as_steps(&self) -> Option<&StepFunction> {
        Some(self)
    }
}

/// Evenly spaced test points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_drifts_respect_sup_norm() {
        let pts = linspace(-5.0, 5.0, 2001);
        for d in [
            DriftSpec::sign(),
            DriftSpec::step(),
            DriftSpec::comb(3).unwrap(),
            DriftSpec::smooth_sine(1.0),
            DriftSpec::arctan(1.0, 0.5),
        ] {
            d.check_sup_norm(&pts).unwrap();
        }
    }

    #[test]
    fn smooth_derivatives_match_differences() {
        let pts = linspace(-3.0, 3.0, 61);
        DriftSpec::smooth_sine(0.7)
            .check_derivative(&pts, 1e-5, 1e-8)
            .unwrap();
        DriftSpec::arctan(1.0, 0.5)
            .check_derivative(&pts, 1e-5, 1e-8)
            .unwrap();
    }

    #[test]
    fn lying_sup_norm_is_caught() {
        let d = DriftSpec::from_fn("x", 1.0, |x| x).unwrap();
        assert!(d.check_sup_norm(&[0.5, 2.0]).is_err());
    }

    #[test]
    fn sign_and_step_values() {
        let s = DriftSpec::sign();
        assert_eq!(s.eval(-2.0), -1.0);
        assert_eq!(s.eval(0.0), 0.0);
        assert_eq!(s.eval(1e-300), 1.0);
        assert_eq!(DriftSpec::step().eval(-1e-9), 0.0);
    }

    #[test]
    fn comb_alternates() {
        let c = DriftSpec::comb(1).unwrap();
        // width 0.5 pieces on [-1, 1]
        assert_eq!(c.eval(-0.9), -1.0);
        assert_eq!(c.eval(-0.4), 1.0);
        assert_eq!(c.eval(0.1), -1.0);
        assert_eq!(c.eval(0.6), 1.0);
        assert_eq!(c.eval(3.0), 1.0);
    }

    #[test]
    fn c1_requires_derivative() {
        struct NoDeriv;
        impl Drift for NoDeriv {
            fn value(&self, x: f64) -> f64 {
                x.tanh()
            }
        }
        assert!(DriftSpec::new("t", 1.0, Smoothness::C1, Arc::new(NoDeriv)).is_err());
    }
}
