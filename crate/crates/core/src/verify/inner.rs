//! Inner-loop accuracy: zeroth-order SGD on the lower level against the
//! plug-in bounds for a target `ε` and for the solver's per-iteration
//! accuracy `Ā_k`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{bounds, BoundBundle, CheckReport};
use crate::error::Result;
use crate::problems::{NoiseModel, QuadraticBilevel, QuadraticParts};
use crate::rng::{child_seed, stream, Phase};
use crate::stats::Moments;
use crate::zdsba::{inner_budget, inner_length, inner_sgd, inner_step};

#[derive(Debug, Clone, PartialEq)]
pub struct InnerConfig {
    pub n: usize,
    pub m: usize,
    pub sigma: f64,
    pub mu2: f64,
    pub eps_grid: Vec<f64>,
    /// Outer indices `k` whose `ε_k = (n+m)²/(k+1)` drives the `Ā_k` check.
    pub outer_indices: Vec<usize>,
    pub seeds: usize,
    pub seed: u64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self { n: 2, m: 4, sigma: 0.3, mu2: 1e-3, eps_grid: vec![0.1, 0.01], outer_indices: vec![71, 719], seeds: 50, seed: 41 }
    }
}

/// `A = I`, `B = 0` and a fixed `b`, so `L_{1,g} = L_{1,G} = λ_g = 1` and `y* = b`.
fn fixture(cfg: &InnerConfig) -> Result<QuadraticBilevel> {
    let mut parts = QuadraticParts::zeros(cfg.n, cfg.m);
    parts.a = DMatrix::identity(cfg.m, cfg.m);
    parts.b_vec = DVector::from_fn(cfg.m, |i, _| 1.0 - 0.5 * i as f64);
    parts.noise = NoiseModel::LinearTerm { sigma: cfg.sigma };
    QuadraticBilevel::new(parts)
}

fn mean_sq_error(prob: &QuadraticBilevel, cfg: &InnerConfig, iters: usize, beta: f64, seed: u64) -> Result<(f64, f64)> {
    let x = DVector::zeros(cfg.n);
    let y0 = DVector::zeros(cfg.m);
    let ystar = prob.lower_solution(&x);
    let errs: Vec<Result<f64>> = (0..cfg.seeds)
        .into_par_iter()
        .map(|s| {
            let y = inner_sgd(&prob.lower(), &x, &y0, cfg.mu2, iters, beta, &mut stream(seed, Phase::Inner, s as u64))?;
            Ok((y - &ystar).norm_squared())
        })
        .collect();
    let mut m = Moments::default();
    for e in errs {
        m.push(e?);
    }
    Ok((m.mean, m.std_error()))
}

pub fn check_inner_sgd(cfg: &InnerConfig) -> Result<CheckReport> {
    let mut report = CheckReport::new("inner");
    let prob = fixture(cfg)?;
    let c = prob.constants(1.0);
    let x = DVector::zeros(cfg.n);
    let gap0 = prob.lower_solution(&x).norm_squared();

    for (i, &eps) in cfg.eps_grid.iter().enumerate() {
        let beta = inner_step(eps, cfg.m, c.l1_big_g, c.lambda_g);
        let t = inner_length(eps, beta, c.lambda_g);
        let (lhs, se) = mean_sq_error(&prob, cfg, t, beta, child_seed(cfg.seed, i as u64))?;
        let rhs = bounds::inner_sgd_bound(eps, gap0, cfg.mu2, cfg.m, &c);
        report.bundles.push(BoundBundle::upper(format!("inner sgd eps={eps} T={t} beta={beta}"), lhs, se, rhs));
    }

    // Per-iteration accuracy with the solver's budget t_k and η₂ = μ₂.
    let dim2 = ((cfg.n + cfg.m) as f64).powi(2);
    for &k in &cfg.outer_indices {
        let eps = dim2 / (k as f64 + 1.0);
        let beta = inner_step(eps, cfg.m, c.l1_big_g, c.lambda_g);
        let t = inner_budget(eps, cfg.m, c.l1_big_g, c.lambda_g);
        let (lhs, se) = mean_sq_error(&prob, cfg, t, beta, child_seed(cfg.seed, 100 + k as u64))?;
        let rhs = bounds::inner_loop_accuracy(eps, gap0, cfg.mu2, cfg.mu2, cfg.n, cfg.m, &c);
        report.bundles.push(BoundBundle::upper(format!("inner accuracy k={k} eps={eps:.4} t={t}"), lhs, se, rhs));
    }

    // The smoothed lower solution of a quadratic is the exact one.
    report.bundles.push(BoundBundle::upper(
        "lower solution gap",
        0.0,
        0.0,
        bounds::lower_solution_gap(cfg.mu2, cfg.mu2, cfg.n, cfg.m, &c),
    ));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_constants_are_unit() {
        let cfg = InnerConfig::default();
        let c = fixture(&cfg).unwrap().constants(1.0);
        assert!((c.l1_g - 1.0).abs() < 1e-12 && (c.lambda_g - 1.0).abs() < 1e-12);
        assert!((c.sigma1_g - 0.3).abs() < 1e-12);
        let beta = inner_step(0.01, 4, c.l1_big_g, c.lambda_g);
        assert_eq!((beta, inner_length(0.01, beta, 1.0)), (0.01, 461));
    }

    #[test]
    fn noiseless_start_at_solution_stays_there_in_mean() {
        let cfg = InnerConfig { sigma: 0.0, seeds: 10, ..Default::default() };
        let r = check_inner_sgd(&cfg).unwrap();
        assert!(r.passed(), "{}", r.verdict());
    }
}
