//! Hypergradient surrogate error.
//!
//! For quadratics `∇̄(f,g)(x, y) − ∇ψ(x) = BᵀA⁻¹Q (y − y*(x))`, so the error
//! is linear in the lower-level error with a direction-dependent constant
//! `C₁`. The smoothed estimator on a decoupled fixture is checked by Monte
//! Carlo against the smoothing-gap plug-in `√A`.

use nalgebra::DVector;
use rayon::prelude::*;

use super::{bounds, BoundBundle, CheckReport, RateFit};
use crate::error::Result;
use crate::problems::{decoupled_problem, random_problem, NoiseModel};
use crate::rng::{child_seed, normal_vector, stream, Phase};
use crate::smoothing::SmoothingParams;
use crate::stats::{Moments, VecMoments};
use crate::zdsba::hypergradient_estimate;

#[derive(Debug, Clone, PartialEq)]
pub struct HypergradConfig {
    pub n: usize,
    pub m: usize,
    pub radii: Vec<f64>,
    pub seeds: usize,
    pub directions: usize,
    /// Monte-Carlo draws of the smoothed hypergradient estimator.
    pub samples: usize,
    pub szhia_iterations: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for HypergradConfig {
    fn default() -> Self {
        Self {
            n: 3,
            m: 3,
            radii: vec![1e-1, 1e-2, 1e-3],
            seeds: 10,
            directions: 20,
            samples: 100_000,
            szhia_iterations: 20,
            gamma: 0.1,
            seed: 51,
        }
    }
}

pub fn check_hypergradient(cfg: &HypergradConfig) -> Result<CheckReport> {
    let mut report = CheckReport::new("hypergrad");
    let prob = random_problem(cfg.n, cfg.m, 1.0, NoiseModel::None, cfg.seed)?;

    // errs[s][i]: seed s, radius i, averaged over random directions
    let mut errs = vec![vec![0.0; cfg.radii.len()]; cfg.seeds];
    let mut exact_at_solution = 0.0f64;
    for (s, row) in errs.iter_mut().enumerate() {
        let mut rng = stream(child_seed(cfg.seed, s as u64), Phase::Verify, 40);
        let x = normal_vector(&mut rng, cfg.n);
        let ystar = prob.lower_solution(&x);
        let truth = prob.hypergradient(&x);
        exact_at_solution = exact_at_solution.max((prob.bar_hypergradient(&x, &ystar) - &truth).norm());
        for (i, &r) in cfg.radii.iter().enumerate() {
            let mut sum = 0.0;
            for _ in 0..cfg.directions {
                let d = normal_vector(&mut rng, cfg.m).normalize();
                let y = &ystar + d * r;
                sum += (prob.bar_hypergradient(&x, &y) - &truth).norm();
            }
            row[i] = sum / cfg.directions as f64;
        }
    }
    let pts: Vec<(f64, f64)> =
        cfg.radii.iter().enumerate().map(|(i, &r)| (r, errs.iter().map(|row| row[i]).sum::<f64>() / cfg.seeds as f64)).collect();
    report.fits.push(RateFit::log_log("hypergradient error vs lower error", pts, (0.9, 1.1), 0.8));

    let c1: Moments =
        errs.iter().map(|row| row.iter().zip(&cfg.radii).map(|(e, r)| e / r).sum::<f64>() / cfg.radii.len() as f64).collect();
    let cv = c1.variance().sqrt() / c1.mean;
    report.bundles.push(BoundBundle::upper(format!("C1 = {:.4} positive", c1.mean), -c1.mean, 0.0, 0.0));
    report.bundles.push(BoundBundle::upper(format!("C1 coefficient of variation (C1 = {:.4})", c1.mean), cv, 0.0, 0.2));
    report.bundles.push(BoundBundle::upper("hypergradient error at y = y*(x)", exact_at_solution, 0.0, 0.0));

    // Decoupled fixture: E ∇̃ψ(x, y*(x)) = ∇ψ(x) up to the smoothing gap.
    let (n, m) = (2, 2);
    let dec = decoupled_problem(n, m, NoiseModel::LinearTerm { sigma: 0.1 })?;
    let params = SmoothingParams::for_budget(n, m, 99);
    let x = DVector::from_vec(vec![0.5, -1.0]);
    let ybar = dec.lower_solution(&x);
    let constants = dec.constants(2.0);
    let (upper, lower) = (dec.upper(), dec.lower());
    let draws: Vec<Result<DVector<f64>>> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(child_seed(cfg.seed, 7), Phase::OuterGradient, i as u64);
            Ok(hypergradient_estimate(&upper, &lower, &x, &ybar, &params, cfg.gamma, cfg.szhia_iterations, &constants, &mut rng)?
                .value)
        })
        .collect();
    let mut acc = VecMoments::new(n);
    for d in draws {
        acc.push(&d?);
    }
    let diff = &acc.mean - dec.hypergradient(&x);
    let sqrt_a = bounds::sqrt_a(params.eta1, params.mu1, params.eta2, params.mu2, n, m, &constants);
    report.bundles.push(BoundBundle::upper("decoupled smoothed hypergradient gap", diff.norm(), acc.std_error().norm(), sqrt_a));
    Ok(report)
}
