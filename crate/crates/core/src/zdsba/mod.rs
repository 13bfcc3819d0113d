//! Double-loop zeroth-order bilevel solver.
//!
//! Outer iteration `k`:
//!  1. `t_k` steps of zeroth-order SGD on `g(x_k, ·)` (x unperturbed) give `ȳ_k`;
//!  2. `∇̃ψ^k = ∇̃_x F_{η₁,μ₁} − ∇̃²_xy G_{η₂,μ₂} H̃^k`, with `H̃^k` from
//!     `b_k` SZHIA steps (run with `η₁ = 0`);
//!  3. `x_{k+1} = Π_X(x_k − α_k ∇̃ψ^k)`.
//!
//! Every outer iteration reads two sub-streams of the run seed, one for the
//! inner loop and one for the hypergradient, so iterations replay in isolation.

mod schedule;

pub use schedule::{inner_budget, inner_length, inner_step, szhia_budget, Regime, Schedule, ScheduleOverrides};

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::problems::{FeasibleSet, Oracle, ProblemConstants, QuadraticBilevel};
use crate::rng::{stream, Phase, Stream};
use crate::smoothing::{grad_x_sample, grad_y_sample, SmoothingParams, Stencil};
use crate::szhia::{run_szhia, SzhiaConfig};

/// `t` steps of `y ← y − β v [G(x, y+μ₂v, ζ) − G(x, y, ζ)]/μ₂`.
pub fn inner_sgd<G: Oracle + ?Sized>(
    lower: &G,
    x: &DVector<f64>,
    y_init: &DVector<f64>,
    mu2: f64,
    iterations: usize,
    beta: f64,
    rng: &mut Stream,
) -> Result<DVector<f64>> {
    check_dim("x block", lower.dim_x(), x.len())?;
    check_dim("y block", lower.dim_y(), y_init.len())?;
    if !(mu2 > 0.0 && mu2.is_finite()) {
        return Err(Error::InvalidParameter(format!("mu2 must be positive, got {mu2}")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    let mut y = y_init.clone();
    let mut st = Stencil::new(x.len(), y.len());
    let mut g = DVector::zeros(y.len());
    for t in 0..iterations {
        grad_y_sample(lower, x, &y, 0.0, mu2, &mut st, rng, &mut g)?;
        y.axpy(-beta, &g, 1.0);
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("inner iterate became non-finite at step {}", t + 1)));
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypergradientEstimate {
    pub value: DVector<f64>,
    pub draws_f: u64,
    pub draws_g: u64,
}

/// One draw of `∇̃ψ^k` at `(x_k, ȳ_k)`.
///
/// Draw order on `rng`: the `F` forward difference `(u, v, ξ)`, the `G`
/// cross stencil `(u, v, ζ)`, then the SZHIA steps.
#[allow(clippy::too_many_arguments)]
pub fn hypergradient_estimate<F: Oracle + ?Sized, G: Oracle + ?Sized>(
    upper: &F,
    lower: &G,
    x: &DVector<f64>,
    ybar: &DVector<f64>,
    params: &SmoothingParams,
    gamma: f64,
    szhia_iterations: usize,
    constants: &ProblemConstants,
    rng: &mut Stream,
) -> Result<HypergradientEstimate> {
    params.validate()?;
    for (name, r) in [("eta1", params.eta1), ("mu1", params.mu1), ("eta2", params.eta2), ("mu2", params.mu2)] {
        if r == 0.0 {
            return Err(Error::InvalidParameter(format!("{name} must be positive for the hypergradient")));
        }
    }
    let (n, m) = (x.len(), ybar.len());
    check_dim("x block", lower.dim_x(), n)?;
    check_dim("y block", lower.dim_y(), m)?;

    let mut st = Stencil::new(n, m);
    let mut gx = DVector::zeros(n);
    grad_x_sample(upper, x, ybar, params.eta1, params.mu1, &mut st, rng, &mut gx)?;

    let mut cross = Stencil::new(n, m);
    let second = cross.second(lower, x, ybar, params.eta2, params.mu2, rng)?;

    let inner = SmoothingParams { eta1: 0.0, ..*params };
    let mut cfg = SzhiaConfig::new(gamma, szhia_iterations);
    cfg.z_scale = constants.l0_f / constants.lambda_g;
    let h = run_szhia(upper, lower, x, ybar, &inner, &cfg, constants, rng)?;

    let coef = cross.dirs.v.dot(&h.z) * second / (2.0 * params.eta2 * params.mu2);
    gx.axpy(-coef, &cross.dirs.u, 1.0);
    if !gx.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("hypergradient estimate is not finite".into()));
    }
    Ok(HypergradientEstimate { value: gx, draws_f: 2 + h.draws_f, draws_g: 3 + h.draws_g })
}

/// `x_{k+1} = Π_X(x_k − α grad)`, the minimizer of the proximal subproblem.
pub fn outer_step(x: &DVector<f64>, grad: &DVector<f64>, alpha: f64, set: &FeasibleSet) -> Result<DVector<f64>> {
    check_dim("gradient", x.len(), grad.len())?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    Ok(set.project(&(x - grad * alpha)))
}

/// One trajectory row: the state after outer step `k` (rows start at 1).
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub k: usize,
    pub x: DVector<f64>,
    pub dist_sq: Option<f64>,
    pub psi: Option<f64>,
    pub grad_norm_sq: Option<f64>,
    pub t_k: usize,
    pub b_k: usize,
    pub draws_f: u64,
    pub draws_g: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub x0: DVector<f64>,
    pub rows: Vec<RunRow>,
    /// `x̂_N = Σ_{k<N} α_k⁻¹ x_k / Σ_{k<N} α_k⁻¹` (`x_0` when `N = 0`).
    pub x_hat: DVector<f64>,
    /// Random index with `P(R = k) ∝ α_k`, `k < N`.
    pub r_index: Option<usize>,
    pub x_star: Option<DVector<f64>>,
}

impl RunRecord {
    /// `x_k` for `k = 0..=N`.
    pub fn x(&self, k: usize) -> &DVector<f64> {
        if k == 0 {
            &self.x0
        } else {
            &self.rows[k - 1].x
        }
    }

    pub fn final_x(&self) -> &DVector<f64> {
        self.x(self.rows.len())
    }

    pub fn x_r(&self) -> Option<&DVector<f64>> {
        self.r_index.map(|r| self.x(r))
    }

    pub fn draws(&self) -> (u64, u64) {
        self.rows.last().map_or((0, 0), |r| (r.draws_f, r.draws_g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarmStart {
    /// The inner loop of iteration `k+1` starts from `ȳ_k`.
    Warm,
    /// Every inner loop starts from `y_0`.
    Cold,
}

/// Everything a run needs besides the problem and the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ZdsbaConfig {
    pub schedule: Schedule,
    pub params: SmoothingParams,
    pub x0: DVector<f64>,
    pub y0: DVector<f64>,
    pub warm_start: WarmStart,
    /// Region radius used for `L_{0,f}` (only scales the SZHIA divergence guard).
    pub region_radius: f64,
}

/// Run the solver on a quadratic fixture, recording closed-form diagnostics.
pub fn run_zdsba(problem: &QuadraticBilevel, config: &ZdsbaConfig, seed: u64) -> Result<RunRecord> {
    let schedule = &config.schedule;
    schedule.validate()?;
    config.params.validate()?;
    let (n, m) = (problem.n(), problem.m());
    check_dim("schedule n", n, schedule.n)?;
    check_dim("schedule m", m, schedule.m)?;
    check_dim("x0", n, config.x0.len())?;
    check_dim("y0", m, config.y0.len())?;
    let set = problem.set();
    if schedule.regime == Regime::Convex && !set.is_bounded() {
        return Err(Error::Config("the convex schedule needs a bounded X (bounded X required)".into()));
    }
    if !set.contains(&config.x0, 1e-12) {
        return Err(Error::Config("x0 must lie in X".into()));
    }
    let constants = problem.constants(config.region_radius);
    let x_star = problem.upper_minimizer().ok();
    let upper = problem.upper();
    let lower = problem.lower();

    let big_n = schedule.outer_iterations;
    let mut x = config.x0.clone();
    let mut y = config.y0.clone();
    let mut rows = Vec::with_capacity(big_n);
    let (mut draws_f, mut draws_g) = (0u64, 0u64);
    let mut weighted = DVector::zeros(n);
    let mut weight = 0.0;
    let x_limit = 1e6 * (1.0 + config.x0.norm() + x_star.as_ref().map_or(0.0, |v| v.norm()));

    for k in 0..big_n {
        let alpha = schedule.alpha(k);
        weighted.axpy(1.0 / alpha, &x, 1.0);
        weight += 1.0 / alpha;

        let t_k = schedule.inner_iterations(k);
        let b_k = schedule.szhia_iterations(k);
        let start = match config.warm_start {
            WarmStart::Warm => y.clone(),
            WarmStart::Cold => config.y0.clone(),
        };
        let mut rng = stream(seed, Phase::Inner, k as u64);
        y = inner_sgd(&lower, &x, &start, config.params.mu2, t_k, schedule.beta(k), &mut rng)?;

        let mut rng = stream(seed, Phase::OuterGradient, k as u64);
        let est = hypergradient_estimate(&upper, &lower, &x, &y, &config.params, schedule.gamma, b_k, &constants, &mut rng)?;
        x = outer_step(&x, &est.value, alpha, set)?;
        if !(x.norm() <= x_limit) {
            return Err(Error::Divergence(format!("outer iterate norm exceeded {x_limit:e} at k = {}", k + 1)));
        }
        draws_f += est.draws_f;
        draws_g += est.draws_g + 2 * t_k as u64;
        rows.push(RunRow {
            k: k + 1,
            dist_sq: x_star.as_ref().map(|xs| (&x - xs).norm_squared()),
            psi: Some(problem.psi(&x)),
            grad_norm_sq: Some(problem.hypergradient(&x).norm_squared()),
            x: x.clone(),
            t_k,
            b_k,
            draws_f,
            draws_g,
        });
    }

    let x_hat = if weight > 0.0 { weighted / weight } else { config.x0.clone() };
    let r_index = (big_n > 0).then(|| {
        let total: f64 = (0..big_n).map(|k| schedule.alpha(k)).sum();
        let mut rng = stream(seed, Phase::Index, 0);
        let mut target = rng.random::<f64>() * total;
        let mut pick = big_n - 1;
        for k in 0..big_n {
            target -= schedule.alpha(k);
            if target < 0.0 {
                pick = k;
                break;
            }
        }
        pick
    });
    Ok(RunRecord { x0: config.x0.clone(), rows, x_hat, r_index, x_star })
}
