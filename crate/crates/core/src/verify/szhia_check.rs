//! SZHIA diagnostics on closed-form fixtures: geometric decay of the bias
//! `E z_T − z̄`, a step-size-proportional variance floor, and recovery of `z̄`.
//!
//! For a quadratic lower level the Hessian-action sample is unbiased and
//! linear in `z`, so `E z_T − z̄ = (I − γA)^T (z₀ − z̄)` holds exactly; its
//! norm (not its square) therefore decays with slope `log(1 − γλ_g)` when
//! `A = λ_g I`. The squared bound is also checked pointwise.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{bounds, BoundBundle, CheckReport, RateFit};
use crate::error::Result;
use crate::problems::{NoiseModel, QuadraticBilevel, QuadraticParts};
use crate::rng::{child_seed, stream, Phase};
use crate::smoothing::SmoothingParams;
use crate::stats::{Moments, VecMoments};
use crate::szhia::{run_szhia_observed, SzhiaConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SzhiaCheckConfig {
    pub replications: usize,
    /// Step size of the bias-decay experiment (`λ_g = 1`).
    pub gamma: f64,
    pub horizon: usize,
    /// Samples averaged per step in the bias experiment; the bias identity
    /// holds for any batch, a larger one only tightens the estimate.
    pub bias_batch: usize,
    /// Step sizes `γ` and `γ/2` of the plateau experiment (batch 1).
    pub plateau_gamma: f64,
    pub burn_in: usize,
    pub window: usize,
    /// Recovery of `z̄ = A⁻¹(1, 1)` with `A = diag(2, 1)`, `γ = 0.1`, `T = 500`.
    pub recovery_runs: usize,
    pub recovery_batch: usize,
    pub recovery_tolerance: f64,
    pub seed: u64,
}

impl Default for SzhiaCheckConfig {
    fn default() -> Self {
        Self {
            replications: 200,
            gamma: 0.1,
            horizon: 50,
            bias_batch: 100,
            plateau_gamma: 0.02,
            burn_in: 600,
            window: 2000,
            recovery_runs: 16,
            recovery_batch: 32_768,
            recovery_tolerance: 1e-2,
            seed: 31,
        }
    }
}

fn diag_problem(a: &[f64], s: &[f64], noise: NoiseModel) -> Result<QuadraticBilevel> {
    let mut parts = QuadraticParts::zeros(1, a.len());
    parts.a = DMatrix::from_diagonal(&DVector::from_column_slice(a));
    parts.s = DVector::from_column_slice(s);
    parts.noise = noise;
    QuadraticBilevel::new(parts)
}

/// `z_τ` for `τ = 0..=T` of `reps` independent runs, merged per `τ`.
fn trajectories(
    prob: &QuadraticBilevel,
    params: &SmoothingParams,
    cfg: &SzhiaConfig,
    reps: usize,
    seed: u64,
) -> Result<Vec<VecMoments>> {
    let (x, y) = (DVector::zeros(prob.n()), DVector::zeros(prob.m()));
    let constants = prob.constants(1.0);
    let per_rep: Vec<Result<Vec<DVector<f64>>>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut path = Vec::with_capacity(cfg.iterations + 1);
            let mut rng = stream(seed, Phase::Szhia, r as u64);
            run_szhia_observed(&prob.upper(), &prob.lower(), &x, &y, params, cfg, &constants, &mut rng, |_, z| {
                path.push(z.clone())
            })?;
            Ok(path)
        })
        .collect();
    let mut acc = vec![VecMoments::new(prob.m()); cfg.iterations + 1];
    for path in per_rep {
        for (t, z) in path?.iter().enumerate() {
            acc[t].push(z);
        }
    }
    Ok(acc)
}

/// Mean over replications of the window-average of `‖z_τ − z̄‖²`.
fn plateau(prob: &QuadraticBilevel, params: &SmoothingParams, gamma: f64, c: &SzhiaCheckConfig, seed: u64) -> Result<(f64, f64)> {
    let zbar = prob.hessian_inverse_product(&DVector::zeros(prob.m()));
    let (x, y) = (DVector::zeros(prob.n()), DVector::zeros(prob.m()));
    let constants = prob.constants(1.0);
    let mut cfg = SzhiaConfig::new(gamma, c.burn_in + c.window);
    cfg.z0 = Some(zbar.as_slice().to_vec());
    cfg.z_scale = zbar.norm();
    let per_rep: Vec<Result<f64>> = (0..c.replications)
        .into_par_iter()
        .map(|r| {
            let mut sum = 0.0;
            let mut rng = stream(seed, Phase::Szhia, r as u64);
            run_szhia_observed(&prob.upper(), &prob.lower(), &x, &y, params, &cfg, &constants, &mut rng, |t, z| {
                if t > c.burn_in {
                    sum += (z - &zbar).norm_squared();
                }
            })?;
            Ok(sum / c.window as f64)
        })
        .collect();
    let mut m = Moments::default();
    for v in per_rep {
        m.push(v?);
    }
    Ok((m.mean, m.std_error()))
}

pub fn check_szhia(c: &SzhiaCheckConfig) -> Result<CheckReport> {
    let mut report = CheckReport::new("szhia");
    let params = SmoothingParams::new(0.0, 1e-3, 0.0, 1e-3)?;

    // Bias decay on a noisy fixture with A = I.
    let prob = diag_problem(&[1.0, 1.0], &[0.5, -0.25], NoiseModel::LinearTerm { sigma: 0.3 })?;
    let zbar = prob.hessian_inverse_product(&DVector::zeros(2));
    let z0 = DVector::from_vec(vec![3.0, 3.0]);
    let gap0 = (&z0 - &zbar).norm_squared();
    let mut cfg = SzhiaConfig::new(c.gamma, c.horizon);
    cfg.z0 = Some(z0.as_slice().to_vec());
    cfg.batch = c.bias_batch;
    cfg.z_scale = z0.norm();
    let acc = trajectories(&prob, &params, &cfg, c.replications, child_seed(c.seed, 1))?;
    let lambda = prob.lambda_g();
    let rate = (1.0 - c.gamma * lambda).ln();
    let mut norm_pts = Vec::new();
    let mut sq_pts = Vec::new();
    for (t, m) in acc.iter().enumerate() {
        let d = &m.mean - &zbar;
        let se = m.std_error();
        let sq = d.norm_squared();
        if t > 0 && t % 5 == 0 {
            norm_pts.push((t as f64, sq.sqrt()));
            sq_pts.push((t as f64, sq));
        }
        if [0, 20, c.horizon].contains(&t) {
            let sq_se = if t == 0 { 0.0 } else { 2.0 * d.component_mul(&se).norm() + se.norm_squared() };
            report.bundles.push(BoundBundle::upper(
                format!("bias squared at T={t} gamma={}", c.gamma),
                sq,
                sq_se,
                bounds::szhia_bias(c.gamma, lambda, t, gap0),
            ));
        }
    }
    report.fits.push(RateFit::semi_log(format!("bias norm decay gamma={}", c.gamma), norm_pts, (rate - 0.02, rate + 0.02), 0.8));
    report.fits.push(RateFit::semi_log(format!("bias squared decay gamma={}", c.gamma), sq_pts, (-1e3, rate + 0.1), 0.8));

    // Variance floor at γ and γ/2: ratio in [0.3, 0.75] ⇔ log-log slope in
    // [ln 0.75 / ln 0.5, ln 0.3 / ln 0.5].
    let (hi, hi_se) = plateau(&prob, &params, c.plateau_gamma, c, child_seed(c.seed, 2))?;
    let (lo, lo_se) = plateau(&prob, &params, c.plateau_gamma / 2.0, c, child_seed(c.seed, 3))?;
    let half = 0.5f64.ln();
    report.fits.push(RateFit::log_log(
        "plateau vs gamma",
        vec![(c.plateau_gamma / 2.0, lo), (c.plateau_gamma, hi)],
        (0.75f64.ln() / half, 0.3f64.ln() / half),
        0.8,
    ));
    let ratio = lo / hi;
    let ratio_se = ratio * ((lo_se / lo).powi(2) + (hi_se / hi).powi(2)).sqrt();
    report.bundles.push(BoundBundle::upper("plateau ratio <= 0.75", ratio, ratio_se, 0.75));

    // Recovery of z̄ on the deterministic fixture.
    let det = diag_problem(&[2.0, 1.0], &[1.0, 1.0], NoiseModel::None)?;
    let target = det.hessian_inverse_product(&DVector::zeros(2));
    let mut cfg = SzhiaConfig::new(0.1, 500);
    cfg.batch = c.recovery_batch;
    cfg.z_scale = target.norm();
    let acc = trajectories(&det, &params, &cfg, c.recovery_runs, child_seed(c.seed, 4))?;
    let last = &acc[500];
    let se = last.std_error();
    for i in 0..2 {
        report.bundles.push(BoundBundle::upper(
            format!("recovery of zbar[{i}] = {}", target[i]),
            (last.mean[i] - target[i]).abs(),
            se[i],
            c.recovery_tolerance,
        ));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduced_run_passes_bias_checks() {
        let c = SzhiaCheckConfig {
            replications: 40,
            window: 400,
            burn_in: 300,
            recovery_runs: 2,
            recovery_batch: 64,
            recovery_tolerance: 1.0,
            ..Default::default()
        };
        let r = check_szhia(&c).unwrap();
        let t0 = r.bundles.iter().find(|b| b.name.starts_with("bias squared at T=0")).unwrap();
        assert_eq!(t0.margin, 0.0);
        assert!(r.fits[0].slope < 0.0);
        assert!(r.bundles.iter().filter(|b| b.name.starts_with("bias")).all(|b| b.pass), "{}", r.verdict());
    }
}
