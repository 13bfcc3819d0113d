//! Gap between a function and its two-block Gaussian smoothing: values,
//! gradients and Hessian blocks, deterministic and stochastic.
//!
//! Matrix gaps use the spectral norm.

use nalgebra::{DMatrix, DVector};

use super::bounds;
use super::fixtures::{NormFn, QuadForm, RidgeLogCosh};
use super::{BoundBundle, CheckReport};
use crate::error::Result;
use crate::linalg::spectral_norm;
use crate::problems::Oracle;
use crate::rng::{fill_normal, normal_vector, stream, Phase};
use crate::smoothing::batch_moments;

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingBoundsConfig {
    pub n: usize,
    pub m: usize,
    pub etas: Vec<f64>,
    pub mus: Vec<f64>,
    /// Monte-Carlo samples for the Lipschitz-only (norm) fixture.
    pub samples: usize,
    pub seed: u64,
}

impl Default for SmoothingBoundsConfig {
    fn default() -> Self {
        Self { n: 3, m: 2, etas: vec![0.01, 0.05, 0.25], mus: vec![0.01, 0.05, 0.25], samples: 200_000, seed: 7 }
    }
}

fn split(v: &DVector<f64>, n: usize, m: usize) -> (DVector<f64>, DVector<f64>) {
    (v.rows(0, n).into_owned(), v.rows(n, m).into_owned())
}

fn block(h: &DMatrix<f64>, r: (usize, usize), s: (usize, usize)) -> DMatrix<f64> {
    h.view(r, s).into_owned()
}

/// `|E q(z + (ηu, μv)) − q(z)|` by Monte Carlo.
fn mc_value_gap<O: Oracle>(
    o: &O,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eta: f64,
    mu: f64,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let base = o.value(x, y, 0.0);
    let (n, m) = (x.len(), y.len());
    let acc = batch_moments(samples, 1, &mut stream(seed, Phase::Verify, 20), |r, out| {
        let mut u = DVector::zeros(n);
        let mut v = DVector::zeros(m);
        fill_normal(r, &mut u);
        fill_normal(r, &mut v);
        out[0] = o.value(&(x + u * eta), &(y + v * mu), 0.0) - base;
        Ok(())
    })?;
    Ok((acc.mean[0].abs(), acc.std_error()[0]))
}

pub fn check_smoothing_bounds(cfg: &SmoothingBoundsConfig) -> Result<CheckReport> {
    let mut report = CheckReport::new("smoothing");
    let (n, m) = (cfg.n, cfg.m);
    let mut rng = stream(cfg.seed, Phase::Fixture, 2);
    let (x, y) = (normal_vector(&mut rng, n), normal_vector(&mut rng, m));

    let norm = NormFn { n, m, l0: 2.0 };
    let quad = QuadForm::random(n, m, 0.0, cfg.seed);
    let ridge = RidgeLogCosh::random(n, m, 3, 0.0, cfg.seed);
    let noisy = RidgeLogCosh::random(n, m, 3, 0.5, cfg.seed);
    let (l0, l1, l2) = (ridge.l0(), ridge.l1(), ridge.l2());
    let (sig1, sig2) = (noisy.sigma1_sq().sqrt(), noisy.sigma2_sq().sqrt());
    let patterns = 1u32 << noisy.ridges();

    let exact_g = ridge.smoothed_gradient(&x, &y, 0.0, 0.0, None);
    let exact_h = ridge.smoothed_hessian(&x, &y, 0.0, 0.0, None);
    let exact_v = ridge.value(&x, &y, 0.0);
    let (txx, tyy) = {
        let (hxx, _, hyy) = quad.blocks();
        (hxx.trace(), hyy.trace())
    };

    let mut counter = 0u64;
    for &eta in &cfg.etas {
        for &mu in &cfg.mus {
            counter += 1;
            let tag = format!("eta={eta} mu={mu}");
            let mut push = |name: &str, lhs: f64, se: f64, rhs: f64| {
                report.bundles.push(BoundBundle::upper(format!("{name} {tag}"), lhs, se, rhs));
            };

            // Lipschitz functions: the norm at the origin (where the gap is
            // largest) and at a random point, plus the ridge fixture exactly.
            let c0 = bounds::value_gap_c0(norm.l0, n, m, eta, mu);
            let zero = (DVector::zeros(n), DVector::zeros(m));
            let (lhs, se) = mc_value_gap(&norm, &zero.0, &zero.1, eta, mu, cfg.samples, cfg.seed ^ counter)?;
            push("c0 value gap norm@origin", lhs, se, c0);
            let (lhs, se) = mc_value_gap(&norm, &x, &y, eta, mu, cfg.samples, cfg.seed ^ (counter << 8))?;
            push("c0 value gap norm", lhs, se, c0);
            let sv = ridge.smoothed_value(&x, &y, eta, mu, None);
            push("c0 value gap ridge", (sv - exact_v).abs(), 0.0, bounds::value_gap_c0(l0, n, m, eta, mu));

            // C¹: quadratic value gap in closed form, ridge value and gradient gaps.
            let lq = quad.l1();
            push(
                "c1 value gap quadratic",
                (0.5 * eta * eta * txx + 0.5 * mu * mu * tyy).abs(),
                0.0,
                bounds::value_gap_c1(lq, n, m, eta, mu),
            );
            push("c1 value gap ridge", (sv - exact_v).abs(), 0.0, bounds::value_gap_c1(l1, n, m, eta, mu));
            let g = ridge.smoothed_gradient(&x, &y, eta, mu, None);
            let dg = &g - &exact_g;
            let (dgx, dgy) = split(&dg, n, m);
            let (u1x, u1y) = bounds::gradient_gap_c1(l1, n, m, eta, mu);
            push("c1 grad_x gap ridge", dgx.norm(), 0.0, u1x);
            push("c1 grad_y gap ridge", dgy.norm(), 0.0, u1y);
            push("c1 grad gap ridge", dg.norm(), 0.0, u1x + u1y);

            // C²: gradient and Hessian-block gaps.
            let (u2x, u2y) = bounds::gradient_gap_c2(l2, n, m, eta, mu);
            push("c2 grad_x gap ridge", dgx.norm(), 0.0, u2x);
            push("c2 grad_y gap ridge", dgy.norm(), 0.0, u2y);
            push("c2 grad gap ridge", dg.norm(), 0.0, u2x + u2y);
            let dh = ridge.smoothed_hessian(&x, &y, eta, mu, None) - &exact_h;
            let (uxx, uxy, uyy) = bounds::hessian_gap_c2(l2, n, m, eta, mu);
            push("c2 hess_xx gap ridge", spectral_norm(&block(&dh, (0, 0), (n, n))), 0.0, uxx);
            push("c2 hess_xy gap ridge", spectral_norm(&block(&dh, (0, n), (n, m))), 0.0, uxy);
            push("c2 hess_yy gap ridge", spectral_norm(&block(&dh, (n, n), (m, m))), 0.0, uyy);
            push("c2 hess gap ridge", spectral_norm(&dh), 0.0, uxx + uxy + uyy);

            // Stochastic: exact expectation over all sign patterns.
            let mean_g = noisy.smoothed_gradient(&x, &y, eta, mu, None);
            let mean_h = noisy.smoothed_hessian(&x, &y, eta, mu, None);
            let (mut ex, mut ey, mut exy) = (0.0, 0.0, 0.0);
            for p in 0..patterns {
                let d = noisy.smoothed_gradient(&x, &y, eta, mu, Some(p)) - &mean_g;
                let (dx, dy) = split(&d, n, m);
                ex += dx.norm_squared();
                ey += dy.norm_squared();
                let dh = noisy.smoothed_hessian(&x, &y, eta, mu, Some(p)) - &mean_h;
                exy += spectral_norm(&block(&dh, (0, n), (n, m))).powi(2);
            }
            let k = patterns as f64;
            let (bx, by) = bounds::stochastic_gradient_gap(l1, (1.0 + noisy.tau) * l1, sig1, n, m, eta, mu);
            push("stochastic grad_x deviation", ex / k, 0.0, bx);
            push("stochastic grad_y deviation", ey / k, 0.0, by);
            let bxy = bounds::stochastic_hessian_gap(l2, (1.0 + noisy.tau) * l2, sig2, n, m, eta, mu);
            push("stochastic hess_xy deviation", exy / k, 0.0, bxy);
        }
    }

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plug_in_example_value() {
        assert!((bounds::value_gap_c0(2.0, 4, 9, 0.1, 0.2) - 1.2649).abs() < 1e-4);
    }

    #[test]
    fn small_grid_passes() {
        let cfg = SmoothingBoundsConfig { etas: vec![0.05, 0.3], mus: vec![0.1], samples: 20_000, ..Default::default() };
        let r = check_smoothing_bounds(&cfg).unwrap();
        assert!(r.passed(), "{}", r.verdict());
        assert_eq!(r.bundles.len(), 2 * 18);
    }

    #[test]
    fn lipschitz_gap_is_nearly_tight_at_origin() {
        let cfg = SmoothingBoundsConfig { etas: vec![0.1], mus: vec![0.1], samples: 50_000, ..Default::default() };
        let r = check_smoothing_bounds(&cfg).unwrap();
        let b = r.bundles.iter().find(|b| b.name.starts_with("c0 value gap norm@origin")).unwrap();
        assert!(b.lhs_estimate > 0.9 * b.rhs_bound && b.pass);
    }
}
