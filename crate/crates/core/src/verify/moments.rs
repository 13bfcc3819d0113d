//! Second moments of the single-sample estimators on quadratics against
//! their plug-in bounds.
//!
//! The cross-Hessian bound is stated for the kernel `uvᵀδ²/(ημ)`, twice the
//! unbiased kernel used by the solvers; it is checked for that kernel.

use nalgebra::DVector;

use super::bounds::{self, HessianNorms};
use super::fixtures::QuadForm;
use super::{BoundBundle, CheckReport};
use crate::error::Result;
use crate::problems::BlockPoint;
use crate::rng::{child_seed, normal_vector, stream, Phase};
use crate::smoothing::{batch_moments, Stencil};

#[derive(Debug, Clone, PartialEq)]
pub struct MomentConfig {
    pub n: usize,
    pub m: usize,
    pub etas: Vec<f64>,
    pub mus: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
}

impl Default for MomentConfig {
    fn default() -> Self {
        Self { n: 2, m: 2, etas: vec![0.05, 0.1, 0.5], mus: vec![0.05, 0.1, 0.5], samples: 1_000_000, seed: 11 }
    }
}

const LABELS: [&str; 6] = ["grad_x", "grad_y", "grad_full", "hess_xx_action", "hess_yy_action", "hess_xy_action"];

fn moments_at(q: &QuadForm, point: &BlockPoint, eta: f64, mu: f64, samples: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, m) = (q.n, q.m);
    let acc = batch_moments(samples, 6, &mut stream(seed, Phase::Verify, 30), |r, out| {
        let mut st = Stencil::new(n, m);
        let d = st.forward(q, &point.x, &point.y, eta, mu, r)?;
        let gx = st.dirs.u.norm_squared() * (d / eta).powi(2);
        let gy = st.dirs.v.norm_squared() * (d / mu).powi(2);
        out[0] = gx;
        out[1] = gy;
        out[2] = gx + gy;
        let s = st.second(q, &point.x, &point.y, eta, mu, r)?;
        let (u, v) = (&st.dirs.u, &st.dirs.v);
        // θ = e₁ in each block
        let mut hx = u * (u[0] * s / (2.0 * eta * eta));
        hx[0] -= s / (2.0 * eta * eta);
        let mut hy = v * (v[0] * s / (2.0 * mu * mu));
        hy[0] -= s / (2.0 * mu * mu);
        out[3] = hx.norm_squared();
        out[4] = hy.norm_squared();
        out[5] = u.norm_squared() * (v[0] * s / (eta * mu)).powi(2);
        Ok(())
    })?;
    Ok((acc.mean.as_slice().to_vec(), acc.std_error().as_slice().to_vec()))
}

fn rhs(q: &QuadForm, point: &BlockPoint, eta: f64, mu: f64) -> [f64; 6] {
    let (n, m) = (q.n, q.m);
    let l1 = q.l1();
    let (gx, gy) = q.gradient(&point.x, &point.y);
    let (gx2, gy2) = (gx.norm_squared(), gy.norm_squared());
    let (hxx, hxy, hyy) = q.blocks();
    let h = HessianNorms { xx: hxx.norm_squared(), xy: hxy.norm_squared(), yy: hyy.norm_squared() };
    // quadratics have a constant Hessian: L₂ = 0
    [
        bounds::grad_x_moment(l1, n, m, eta, mu, gx2, gy2),
        bounds::grad_y_moment(l1, n, m, eta, mu, gx2, gy2),
        bounds::grad_full_moment(l1, n, m, eta, mu, gx2, gy2),
        bounds::hessian_xx_moment(0.0, n, m, eta, mu, h, 1.0),
        bounds::hessian_yy_moment(0.0, n, m, eta, mu, h, 1.0),
        bounds::hessian_xy_moment(0.0, n, m, eta, mu, h, 1.0),
    ]
}

pub fn check_moment_bounds(cfg: &MomentConfig) -> Result<CheckReport> {
    let mut report = CheckReport::new("moments");
    let (n, m) = (cfg.n, cfg.m);
    let mut rng = stream(cfg.seed, Phase::Fixture, 4);
    let point = BlockPoint::new(normal_vector(&mut rng, n), normal_vector(&mut rng, m))?;
    let origin = BlockPoint::new(DVector::zeros(n), DVector::zeros(m))?;
    let cases = [
        ("half-norm", QuadForm::half_norm(n, m), &point),
        ("half-norm@origin", QuadForm::half_norm(n, m), &origin),
        ("quadform", QuadForm::random(n, m, 0.0, cfg.seed), &point),
    ];
    let mut salt = 0u64;
    for &eta in &cfg.etas {
        for &mu in &cfg.mus {
            for (label, q, p) in &cases {
                salt += 1;
                let (lhs, se) = moments_at(q, p, eta, mu, cfg.samples, child_seed(cfg.seed, salt))?;
                let b = rhs(q, p, eta, mu);
                for i in 0..6 {
                    report.bundles.push(BoundBundle::upper(
                        format!("{} second moment {label} eta={eta} mu={mu}", LABELS[i]),
                        lhs[i],
                        se[i],
                        b[i],
                    ));
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_bound_is_smoothing_term_only() {
        let q = QuadForm::half_norm(2, 2);
        let o = BlockPoint::new(DVector::zeros(2), DVector::zeros(2)).unwrap();
        let b = rhs(&q, &o, 0.1, 0.1);
        let expect = 0.01 * 512.0 + 1e-4 / 1e-2 * 2.0 * 36.0;
        assert!((b[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn half_norm_gradient_moment_is_exact_formula() {
        // q = ½‖z‖² at z: δ = ηuᵀx + μvᵀy + ½(η²‖u‖² + μ²‖v‖²); the
        // estimate agrees with its own small-sample moments within 4 SE.
        let q = QuadForm::half_norm(1, 1);
        let p = BlockPoint::from_slices(&[1.0], &[0.0]).unwrap();
        let (lhs, se) = moments_at(&q, &p, 1e-4, 1e-4, 200_000, 1).unwrap();
        // as η, μ → 0 the x-estimator is u²·x² with E = 3
        assert!((lhs[0] - 3.0).abs() < 4.0 * se[0] + 1e-3, "{} ± {}", lhs[0], se[0]);
    }

    #[test]
    fn small_run_passes() {
        let cfg = MomentConfig { etas: vec![0.1], mus: vec![0.5], samples: 20_000, ..Default::default() };
        let r = check_moment_bounds(&cfg).unwrap();
        assert_eq!(r.bundles.len(), 18);
        assert!(r.passed(), "{}", r.verdict());
    }
}
