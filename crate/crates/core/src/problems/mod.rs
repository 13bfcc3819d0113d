//! Oracle interface and the synthetic bilevel problem suite.
//!
//! Every solver in the crate talks to a problem only through [`Oracle`]:
//! a noisy function-value query whose noise realization is drawn separately
//! from the evaluation, so a finite-difference stencil can reuse one draw
//! for all of its evaluations. [`QuadraticBilevel`] additionally exposes the
//! closed-form lower solution, hypergradient and smoothed values used as
//! ground truth by the verification suite.

mod fixtures;
mod json;
mod quadratic;

pub use fixtures::*;
pub use json::ProblemDocument;
pub use quadratic::{Level, LowerOracle, QuadraticBilevel, QuadraticParts, UpperOracle};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::{normal, Stream};

/// The two-block argument `(x, y)` of the upper and lower objectives.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPoint {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

impl BlockPoint {
    pub fn new(x: DVector<f64>, y: DVector<f64>) -> Result<Self> {
        if x.is_empty() || y.is_empty() {
            return Err(Error::Config("both blocks need dimension >= 1".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("point has non-finite entries".into()));
        }
        Ok(Self { x, y })
    }

    pub fn from_slices(x: &[f64], y: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(x), DVector::from_column_slice(y))
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }
}

/// Noisy zeroth-order access to a function of two blocks.
///
/// `draw_noise` produces one realization of the random parameter (a scalar
/// standard normal for the built-in problems); `value` evaluates the
/// stochastic function at that realization. Implementations hold no mutable
/// state, so concurrent callers only need distinct streams.
pub trait Oracle: Sync {
    fn dim_x(&self) -> usize;
    fn dim_y(&self) -> usize;

    /// Draw one noise realization. Noiseless oracles consume nothing.
    fn draw_noise(&self, rng: &mut Stream) -> f64 {
        let _ = rng;
        0.0
    }

    fn value(&self, x: &DVector<f64>, y: &DVector<f64>, noise: f64) -> f64;

    fn check_point(&self, point: &BlockPoint) -> Result<()> {
        check_dim("x block", self.dim_x(), point.n())?;
        check_dim("y block", self.dim_y(), point.m())
    }
}

impl<O: Oracle + ?Sized> Oracle for &O {
    fn dim_x(&self) -> usize {
        (**self).dim_x()
    }
    fn dim_y(&self) -> usize {
        (**self).dim_y()
    }
    fn draw_noise(&self, rng: &mut Stream) -> f64 {
        (**self).draw_noise(rng)
    }
    fn value(&self, x: &DVector<f64>, y: &DVector<f64>, noise: f64) -> f64 {
        (**self).value(x, y, noise)
    }
}

/// One draw of an oracle at `point`, with dimension and finiteness checks.
pub fn sample_value<O: Oracle + ?Sized>(oracle: &O, point: &BlockPoint, rng: &mut Stream) -> Result<f64> {
    oracle.check_point(point)?;
    let noise = oracle.draw_noise(rng);
    let v = oracle.value(&point.x, &point.y, noise);
    crate::error::check_finite("oracle value", v)
}

/// One draw of `F(x, y, ξ)`.
pub fn eval_f(problem: &QuadraticBilevel, point: &BlockPoint, rng: &mut Stream) -> Result<f64> {
    sample_value(&problem.upper(), point, rng)
}

/// One draw of `G(x, y, ζ)`.
pub fn eval_g(problem: &QuadraticBilevel, point: &BlockPoint, rng: &mut Stream) -> Result<f64> {
    sample_value(&problem.lower(), point, rng)
}

pub fn true_lower_solution(problem: &QuadraticBilevel, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("x block", problem.n(), x.len())?;
    Ok(problem.lower_solution(x))
}

pub fn true_hypergradient(problem: &QuadraticBilevel, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("x block", problem.n(), x.len())?;
    Ok(problem.hypergradient(x))
}

/// `q_{η,μ}(x, y)` of the chosen level, exactly.
pub fn smoothed_value_exact(problem: &QuadraticBilevel, level: Level, point: &BlockPoint, eta: f64, mu: f64) -> Result<f64> {
    problem.upper().check_point(point)?;
    if !(eta >= 0.0 && mu >= 0.0) {
        return Err(Error::InvalidParameter("smoothing radii must be >= 0".into()));
    }
    Ok(problem.smoothed_value(level, &point.x, &point.y, eta, mu))
}

/// Deterministic oracle backed by a closure; used for test functions.
pub struct FnOracle<F> {
    n: usize,
    m: usize,
    f: F,
}

impl<F> FnOracle<F>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> f64 + Sync,
{
    pub fn new(n: usize, m: usize, f: F) -> Self {
        Self { n, m, f }
    }
}

impl<F> Oracle for FnOracle<F>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> f64 + Sync,
{
    fn dim_x(&self) -> usize {
        self.n
    }
    fn dim_y(&self) -> usize {
        self.m
    }
    fn value(&self, x: &DVector<f64>, y: &DVector<f64>, _noise: f64) -> f64 {
        (self.f)(x, y)
    }
}

/// How the stochastic objectives `F`, `G` deviate from `f`, `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseModel {
    None,
    /// `F = f + sigma * xi`: value noise only, gradients stay exact.
    AdditiveValue {
        sigma: f64,
    },
    /// The linear coefficients `r`, `s`, `b` move along fixed unit directions
    /// by `sigma * xi`, which makes the stochastic gradients noisy.
    LinearTerm {
        sigma: f64,
    },
}

impl NoiseModel {
    pub fn sigma(&self) -> f64 {
        match *self {
            NoiseModel::None => 0.0,
            NoiseModel::AdditiveValue { sigma } | NoiseModel::LinearTerm { sigma } => sigma,
        }
    }

    pub fn is_noisy(&self) -> bool {
        self.sigma() > 0.0
    }

    /// Standard deviation bound of the stochastic gradient (`sigma_1`).
    pub fn gradient_sigma(&self) -> f64 {
        match *self {
            NoiseModel::LinearTerm { sigma } => sigma,
            _ => 0.0,
        }
    }

    pub(crate) fn draw(&self, rng: &mut Stream) -> f64 {
        if self.is_noisy() {
            normal(rng)
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.sigma();
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::Config(format!("noise sigma must be finite and >= 0, got {s}")));
        }
        Ok(())
    }
}

/// The closed convex feasible set of the outer variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum FeasibleSet {
    #[serde(rename = "all-of-Rn")]
    Whole,
    #[serde(rename = "box")]
    Box { lower: Vec<f64>, upper: Vec<f64> },
    #[serde(rename = "ball")]
    Ball { center: Vec<f64>, radius: f64 },
}

impl FeasibleSet {
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            FeasibleSet::Whole => Ok(()),
            FeasibleSet::Box { lower, upper } => {
                check_dim("box lower", n, lower.len())?;
                check_dim("box upper", n, upper.len())?;
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                    return Err(Error::Config("box is empty (lower > upper)".into()));
                }
                Ok(())
            }
            FeasibleSet::Ball { center, radius } => {
                check_dim("ball center", n, center.len())?;
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::Config(format!("ball radius must be positive, got {radius}")));
                }
                Ok(())
            }
        }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, FeasibleSet::Whole)
    }

    /// Diameter `D_X`; infinite for the whole space.
    pub fn diameter(&self) -> f64 {
        match self {
            FeasibleSet::Whole => f64::INFINITY,
            FeasibleSet::Box { lower, upper } => lower.iter().zip(upper).map(|(l, u)| (u - l) * (u - l)).sum::<f64>().sqrt(),
            FeasibleSet::Ball { radius, .. } => 2.0 * radius,
        }
    }

    /// Euclidean projection.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            FeasibleSet::Whole => x.clone(),
            FeasibleSet::Box { lower, upper } => DVector::from_fn(x.len(), |i, _| x[i].clamp(lower[i], upper[i])),
            FeasibleSet::Ball { center, radius } => {
                let c = DVector::from_column_slice(center);
                let d = x - &c;
                let norm = d.norm();
                if norm <= *radius {
                    x.clone()
                } else {
                    c + d * (*radius / norm)
                }
            }
        }
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        match self {
            FeasibleSet::Whole => true,
            FeasibleSet::Box { lower, upper } => x.iter().enumerate().all(|(i, v)| *v >= lower[i] - tol && *v <= upper[i] + tol),
            FeasibleSet::Ball { center, radius } => (x - DVector::from_column_slice(center)).norm() <= radius + tol,
        }
    }
}

/// Moduli, Lipschitz constants and variance bounds of a bilevel problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub lambda_g: f64,
    pub l0_f: f64,
    pub l1_f: f64,
    pub l1_g: f64,
    pub l2_g: f64,
    pub l1_big_g: f64,
    pub l2_big_g: f64,
    pub sigma1_f: f64,
    pub sigma1_g: f64,
    pub sigma2_g: f64,
}

impl ProblemConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_g,
            self.l0_f,
            self.l1_f,
            self.l1_g,
            self.l2_g,
            self.l1_big_g,
            self.l2_big_g,
            self.sigma1_f,
            self.sigma1_g,
            self.sigma2_g,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("problem constants must be finite and nonnegative".into()));
        }
        if self.lambda_g <= 0.0 {
            return Err(Error::Config("lambda_g must be positive".into()));
        }
        if self.lambda_g > self.l1_g * (1.0 + 1e-12) {
            return Err(Error::Config(format!("lambda_g ({}) exceeds L1_g ({})", self.lambda_g, self.l1_g)));
        }
        Ok(())
    }
}
