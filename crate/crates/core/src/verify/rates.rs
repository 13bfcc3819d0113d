//! End-to-end convergence rates of the bilevel solver in `N`.
//!
//! Metrics per regime:
//! * strongly convex — `‖x_N − x*‖²`;
//! * convex — `ψ(x̂_N) − ψ*` on a ball;
//! * nonconvex — `E_R‖∇ψ(x_R)‖²`, with the expectation over the random index
//!   `R` taken exactly from the trajectory (`Σ αₖ‖∇ψ(xₖ)‖² / Σ αₖ`).
//!
//! Each metric is averaged over seeds and fitted log-log against `N`.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CheckReport, RateFit};
use crate::error::{Error, Result};
use crate::linalg::{eig_range, sym_spectral_norm};
use crate::problems::{coupled_problem, linear_upper_problem, FeasibleSet, NoiseModel, QuadraticBilevel};
use crate::rng::child_seed;
use crate::smoothing::SmoothingParams;
use crate::stats::Moments;
use crate::szhia::mean_square_gamma;
use crate::zdsba::WarmStart;
use crate::zdsba::{run_zdsba, Regime, RunRecord, Schedule, ZdsbaConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateMetric {
    DistSq,
    PsiGap,
    GradNormSq,
}

impl RateMetric {
    pub fn for_regime(regime: Regime) -> Self {
        match regime {
            Regime::StronglyConvex => RateMetric::DistSq,
            Regime::Convex => RateMetric::PsiGap,
            Regime::Nonconvex => RateMetric::GradNormSq,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RateMetric::DistSq => "dist_sq",
            RateMetric::PsiGap => "psi_gap",
            RateMetric::GradNormSq => "grad_norm_sq",
        }
    }

    /// Accepted slope interval of the log-log fit against `N`.
    pub fn accept(self) -> (f64, f64) {
        match self {
            RateMetric::DistSq => (-1.4, -0.6),
            RateMetric::PsiGap | RateMetric::GradNormSq => (-0.8, -0.2),
        }
    }
}

/// A problem with everything its schedule needs.
#[derive(Debug, Clone)]
pub struct RateFixture {
    pub regime: Regime,
    pub problem: QuadraticBilevel,
    pub x0: DVector<f64>,
    pub y0: DVector<f64>,
    pub lambda_psi: Option<f64>,
    pub l1_psi: Option<f64>,
    /// `min_X ψ` where known in closed form.
    pub psi_star: Option<f64>,
}

impl RateFixture {
    pub fn metric(&self, schedule: &Schedule, record: &RunRecord) -> Result<f64> {
        let p = &self.problem;
        match RateMetric::for_regime(self.regime) {
            RateMetric::DistSq => {
                let xs = record.x_star.as_ref().ok_or_else(|| Error::Config("no closed-form x*".into()))?;
                Ok((record.final_x() - xs).norm_squared())
            }
            RateMetric::PsiGap => {
                let star = self.psi_star.ok_or_else(|| Error::Config("no closed-form psi*".into()))?;
                Ok(p.psi(&record.x_hat) - star)
            }
            RateMetric::GradNormSq => {
                let big_n = record.rows.len();
                let (mut num, mut den) = (0.0, 0.0);
                for k in 0..big_n {
                    let a = schedule.alpha(k);
                    num += a * p.hypergradient(record.x(k)).norm_squared();
                    den += a;
                }
                Ok(if den > 0.0 { num / den } else { p.hypergradient(&record.x0).norm_squared() })
            }
        }
    }
}

/// Fixture per regime on `n + m` variables:
/// * strongly convex — `∇²ψ = I`, `P = I`, `x* = ½·1`, `X = ℝⁿ`;
/// * convex — linear `ψ` on the ball of radius `10‖x₀‖`, `‖x₀‖ = 0.05`;
/// * nonconvex — `f` indefinite in `x` (`P` has a negative eigenvalue),
///   `∇²ψ = I`, `x* = 2·1`, `X = ℝⁿ`.
pub fn rate_fixture(regime: Regime, n: usize, m: usize, lambda_g: f64, sigma: f64, seed: u64) -> Result<RateFixture> {
    let noise = NoiseModel::LinearTerm { sigma };
    let y0 = DVector::zeros(m);
    let xs = DVector::from_element(n, 0.5);
    match regime {
        Regime::StronglyConvex => {
            let problem = coupled_problem(n, m, lambda_g, 1.0, 0.5, 0.0, &xs, noise, seed)?;
            Ok(RateFixture {
                regime,
                problem,
                x0: DVector::zeros(n),
                y0,
                lambda_psi: Some(1.0),
                l1_psi: Some(1.0),
                psi_star: None,
            })
        }
        Regime::Convex => {
            let x0 = DVector::from_element(n, 0.05 / (n as f64).sqrt());
            let radius = 10.0 * x0.norm();
            let set = FeasibleSet::Ball { center: vec![0.0; n], radius };
            let problem = linear_upper_problem(n, m, lambda_g, noise, seed)?.with_set(set)?;
            let g = problem.hypergradient(&DVector::zeros(n));
            let psi_star = problem.psi(&(-&g * (radius / g.norm())));
            // ψ is linear, so any positive L₁ is valid; the unit value sets the step.
            Ok(RateFixture { regime, problem, x0, y0, lambda_psi: None, l1_psi: Some(1.0), psi_star: Some(psi_star) })
        }
        Regime::Nonconvex => {
            let curvature = 1.0;
            let xs = DVector::from_element(n, 2.0);
            let problem = coupled_problem(n, m, lambda_g, curvature, 1.5, 1.0, &xs, noise, seed)?;
            if eig_range(&problem.parts().p).0 >= 0.0 {
                return Err(Error::Config("nonconvex fixture: P came out positive semidefinite; pick another seed".into()));
            }
            Ok(RateFixture {
                regime,
                problem,
                x0: DVector::zeros(n),
                y0,
                lambda_psi: None,
                l1_psi: Some(curvature),
                psi_star: None,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatesConfig {
    pub regime: Regime,
    pub n: usize,
    pub m: usize,
    pub outer: Vec<usize>,
    /// One run per seed at every `N`.
    pub seeds: Vec<u64>,
    pub lambda_g: f64,
    pub sigma: f64,
    pub gamma: Option<f64>,
    pub fixture_seed: u64,
}

impl RatesConfig {
    pub fn new(regime: Regime) -> Self {
        Self {
            regime,
            n: 2,
            m: 2,
            outer: vec![100, 200, 400, 800, 1600, 3200],
            seeds: (0..10).map(|s| child_seed(61, s)).collect(),
            lambda_g: 1.0,
            sigma: 0.1,
            gamma: None,
            fixture_seed: 3,
        }
    }
}

/// Per-`N` ensemble summary.
#[derive(Debug, Clone, PartialEq)]
pub struct RatePoint {
    pub outer: usize,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatesOutcome {
    pub fit: RateFit,
    pub points: Vec<RatePoint>,
    pub fixture: RateFixture,
}

impl RatesOutcome {
    pub fn report(&self) -> CheckReport {
        let mut r = CheckReport::new(format!("rates {}", self.fixture.regime));
        r.fits.push(self.fit.clone());
        r
    }
}

impl PartialEq for RateFixture {
    fn eq(&self, other: &Self) -> bool {
        self.regime == other.regime && self.problem.parts() == other.problem.parts() && self.x0 == other.x0
    }
}

/// The resolved solver configuration for one `N` of a rate experiment.
/// `γ` defaults to the mean-square-stable SZHIA step of the lower level.
pub fn rate_run_config(fx: &RateFixture, outer: usize, gamma: Option<f64>) -> Result<ZdsbaConfig> {
    let (n, m) = (fx.problem.n(), fx.problem.m());
    let region = 1.0 + fx.x0.norm() + fx.problem.upper_minimizer().map(|x| x.norm()).unwrap_or(0.0);
    let constants = fx.problem.constants(region);
    let gamma = gamma.unwrap_or_else(|| mean_square_gamma(constants.lambda_g, sym_spectral_norm(&fx.problem.parts().a), m));
    let schedule = Schedule::new(fx.regime, n, m, outer, gamma, &constants, fx.lambda_psi, fx.l1_psi)?;
    Ok(ZdsbaConfig {
        schedule,
        params: SmoothingParams::for_budget(n, m, outer),
        x0: fx.x0.clone(),
        y0: fx.y0.clone(),
        warm_start: WarmStart::Warm,
        region_radius: region,
    })
}

pub fn check_rates(cfg: &RatesConfig) -> Result<RatesOutcome> {
    let fx = rate_fixture(cfg.regime, cfg.n, cfg.m, cfg.lambda_g, cfg.sigma, cfg.fixture_seed)?;
    let jobs: Vec<(usize, u64)> = cfg.outer.iter().flat_map(|&big_n| cfg.seeds.iter().map(move |&s| (big_n, s))).collect();
    let values: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(big_n, s)| {
            let run_cfg = rate_run_config(&fx, big_n, cfg.gamma)?;
            let record = run_zdsba(&fx.problem, &run_cfg, s)?;
            fx.metric(&run_cfg.schedule, &record)
        })
        .collect();
    let mut points = Vec::with_capacity(cfg.outer.len());
    let mut it = values.into_iter();
    for &big_n in &cfg.outer {
        let mut m = Moments::default();
        for _ in &cfg.seeds {
            m.push(it.next().expect("one value per job")?);
        }
        points.push(RatePoint { outer: big_n, mean: m.mean, std_error: m.std_error() });
    }
    let metric = RateMetric::for_regime(cfg.regime);
    let fit = RateFit::log_log(
        format!("{} {} vs N", cfg.regime, metric.name()),
        points.iter().map(|p| (p.outer as f64, p.mean)).collect(),
        metric.accept(),
        0.8,
    );
    Ok(RatesOutcome { fit, points, fixture: fx })
}
