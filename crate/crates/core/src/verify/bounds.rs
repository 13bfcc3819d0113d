//! Closed-form right-hand sides of the smoothing, moment and convergence
//! bounds, evaluated from dimensions, radii and problem constants.

use crate::problems::ProblemConstants;

fn p32(v: f64) -> f64 {
    v * v.sqrt()
}

fn p52(v: f64) -> f64 {
    v * v * v.sqrt()
}

/// Value gap for an `L₀`-Lipschitz function: `L₀ √(η²n + μ²m)`.
pub fn value_gap_c0(l0: f64, n: usize, m: usize, eta: f64, mu: f64) -> f64 {
    l0 * (eta * eta * n as f64 + mu * mu * m as f64).sqrt()
}

/// Value gap for an `L₁`-smooth function: `(L₁/2)(η²n + μ²m)`.
pub fn value_gap_c1(l1: f64, n: usize, m: usize, eta: f64, mu: f64) -> f64 {
    0.5 * l1 * (eta * eta * n as f64 + mu * mu * m as f64)
}

/// First-order gradient-gap terms `(U¹_x, U¹_y)`.
pub fn gradient_gap_c1(l1: f64, n: usize, m: usize, eta: f64, mu: f64) -> (f64, f64) {
    let (nf, mf) = (n as f64, m as f64);
    let ux = 0.5 * l1 * (eta * p32(nf + 3.0) + mu * mu / eta * mf * nf.sqrt());
    let uy = 0.5 * l1 * (eta * eta / mu * nf * mf.sqrt() + mu * p32(mf + 3.0));
    (ux, uy)
}

/// Second-order gradient-gap terms `(U²_x, U²_y)`.
pub fn gradient_gap_c2(l2: f64, n: usize, m: usize, eta: f64, mu: f64) -> (f64, f64) {
    let (nf, mf) = (n as f64, m as f64);
    let c = 2.0 * l2 / 3.0;
    let ux = c * (eta * eta * (nf + 4.0).powi(2) + mu.powi(3) / eta * p32(mf + 3.0) * nf.sqrt());
    let uy = c * (eta.powi(3) / mu * p32(nf + 3.0) * mf.sqrt() + mu * mu * (mf + 4.0).powi(2));
    (ux, uy)
}

/// Hessian-gap terms `(U²_xx, U²_xy, U²_yy)`.
pub fn hessian_gap_c2(l2: f64, n: usize, m: usize, eta: f64, mu: f64) -> (f64, f64, f64) {
    let (nf, mf) = (n as f64, m as f64);
    let c = 2.0 * l2 / 3.0;
    let uxx = c * (eta * p52(nf + 5.0) + eta * p32(nf + 3.0) + mu.powi(3) / (eta * eta) * (nf + 1.0) * p32(mf + 3.0));
    let uyy = c * (mu * p52(mf + 5.0) + mu * p32(mf + 3.0) + eta.powi(3) / (mu * mu) * (mf + 1.0) * p32(nf + 3.0));
    let uxy = c * (eta * eta / mu * (nf + 4.0).powi(2) * mf.sqrt() + mu * mu / eta * (mf + 4.0).powi(2) * nf.sqrt());
    (uxx, uxy, uyy)
}

/// Variance of the smoothed stochastic partial gradients around the
/// smoothed mean: `(x part, y part)`.
pub fn stochastic_gradient_gap(l1_q: f64, l1_big_q: f64, sigma1: f64, n: usize, m: usize, eta: f64, mu: f64) -> (f64, f64) {
    let (nf, mf) = (n as f64, m as f64);
    let c = 0.5 * (l1_q + l1_big_q).powi(2);
    let tx = eta * p32(nf + 3.0) + mu * mu / eta * mf * nf.sqrt();
    let ty = eta * eta / mu * nf * mf.sqrt() + mu * p32(mf + 3.0);
    (c * tx * tx + 2.0 * sigma1 * sigma1, c * ty * ty + 2.0 * sigma1 * sigma1)
}

/// Same for the smoothed stochastic cross Hessian.
pub fn stochastic_hessian_gap(l2_q: f64, l2_big_q: f64, sigma2: f64, n: usize, m: usize, eta: f64, mu: f64) -> f64 {
    let (nf, mf) = (n as f64, m as f64);
    let t = eta * eta / mu * (nf + 4.0).powi(2) * mf.sqrt() + mu * mu / eta * (mf + 4.0).powi(2) * nf.sqrt();
    8.0 * (l2_q + l2_big_q).powi(2) / 9.0 * t * t + 2.0 * sigma2 * sigma2
}

/// Second moment of the single-sample `x`-gradient estimator.
pub fn grad_x_moment(l1: f64, n: usize, m: usize, eta: f64, mu: f64, gx_sq: f64, gy_sq: f64) -> f64 {
    let (nf, mf) = (n as f64, m as f64);
    l1 * l1 * (eta * eta * (nf + 6.0).powi(3) + mu.powi(4) / (eta * eta) * nf * (mf + 4.0).powi(2))
        + 4.0 * (nf + 2.0) * gx_sq
        + 4.0 * mu * mu / (eta * eta) * nf * gy_sq
}

/// Second moment of the single-sample `y`-gradient estimator.
pub fn grad_y_moment(l1: f64, n: usize, m: usize, eta: f64, mu: f64, gx_sq: f64, gy_sq: f64) -> f64 {
    let (nf, mf) = (n as f64, m as f64);
    l1 * l1 * (mu * mu * (mf + 6.0).powi(3) + eta.powi(4) / (mu * mu) * mf * (nf + 4.0).powi(2))
        + 4.0 * eta * eta / (mu * mu) * mf * gx_sq
        + 4.0 * (mf + 2.0) * gy_sq
}

/// Second moment of the full single-sample gradient estimator.
pub fn grad_full_moment(l1: f64, n: usize, m: usize, eta: f64, mu: f64, gx_sq: f64, gy_sq: f64) -> f64 {
    let (nf, mf) = (n as f64, m as f64);
    l1 * l1
        * (eta * eta * (nf + 6.0).powi(3)
            + mu.powi(4) / (eta * eta) * nf * (mf + 4.0).powi(2)
            + mu * mu * (mf + 6.0).powi(3)
            + eta.powi(4) / (mu * mu) * mf * (nf + 4.0).powi(2))
        + 4.0 * (nf + 2.0 + eta * eta / (mu * mu) * mf) * gx_sq
        + 4.0 * (mf + 2.0 + mu * mu / (eta * eta) * nf) * gy_sq
}

/// Frobenius norms squared of the Hessian blocks at the base point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianNorms {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

/// `E‖∇̃²_xx q θ‖²` bound for the `(uuᵀ − I)δ²/(2η²)` estimator, `θ ∈ ℝⁿ`.
pub fn hessian_xx_moment(l2: f64, n: usize, m: usize, eta: f64, mu: f64, h: HessianNorms, theta_sq: f64) -> f64 {
    let (nf, mf) = (n as f64, m as f64);
    let smooth =
        2.0 * l2 * l2 * (2.0 * eta * eta * (nf + 16.0).powi(4) + mu.powi(6) / eta.powi(4) * (mf + 6.0).powi(3) * (nf + 3.0));
    let curv = 7.5 * (nf + 6.0).powi(2) * h.xx
        + 3.0 * mu * mu / (eta * eta) * (3.0 * nf + 13.0) * h.xy
        + 1.5 * mu.powi(4) / eta.powi(4) * (mf + 2.0) * (nf + 3.0) * h.yy;
    (smooth + curv) * theta_sq
}

/// The same bound with the roles of the blocks exchanged: `E‖∇̃²_yy q θ‖²`, `θ ∈ ℝᵐ`.
pub fn hessian_yy_moment(l2: f64, n: usize, m: usize, eta: f64, mu: f64, h: HessianNorms, theta_sq: f64) -> f64 {
    hessian_xx_moment(l2, m, n, mu, eta, HessianNorms { xx: h.yy, xy: h.xy, yy: h.xx }, theta_sq)
}

/// `E‖ũvᵀ δ²/(ημ) θ‖²` bound for the cross estimator, `θ ∈ ℝᵐ`.
pub fn hessian_xy_moment(l2: f64, n: usize, m: usize, eta: f64, mu: f64, h: HessianNorms, theta_sq: f64) -> f64 {
    let (nf, mf) = (n as f64, m as f64);
    let smooth = 8.0
        * l2
        * l2
        * (eta.powi(4) / (mu * mu) * (nf + 8.0).powi(4) + 2.0 * mu.powi(4) / (eta * eta) * nf * (mf + 12.0).powi(3));
    let curv = 6.0 * eta * eta / (mu * mu) * (nf + 4.0) * (nf + 2.0) * h.xx
        + 36.0 * (nf + 2.0) * h.xy
        + 30.0 * mu * mu / (eta * eta) * nf * (mf + 2.0) * h.yy;
    (smooth + curv) * theta_sq
}

/// Bias of SZHIA after `T` steps: `(1 − γλ_g)^T ‖z₀ − z̄‖²`.
pub fn szhia_bias(gamma: f64, lambda_g: f64, iterations: usize, init_gap_sq: f64) -> f64 {
    (1.0 - gamma * lambda_g).powi(iterations as i32) * init_gap_sq
}

/// Inner SGD bound: `ε[‖y₀ − y*‖² + 8μ₂²(L²_{1,G} + L²_{1,g})(m+4)⁴ + 16(m+4)σ²_{1,G}]`.
pub fn inner_sgd_bound(eps: f64, init_gap_sq: f64, mu2: f64, m: usize, c: &ProblemConstants) -> f64 {
    let mf = m as f64;
    eps * (init_gap_sq
        + 8.0 * mu2 * mu2 * (c.l1_big_g.powi(2) + c.l1_g.powi(2)) * (mf + 4.0).powi(4)
        + 16.0 * (mf + 4.0) * c.sigma1_g.powi(2))
}

/// `Ā_k`, the inner-loop accuracy of outer iteration `k`.
pub fn inner_loop_accuracy(eps_k: f64, init_gap_sq: f64, eta2: f64, mu2: f64, n: usize, m: usize, c: &ProblemConstants) -> f64 {
    let (nf, mf) = (n as f64, m as f64);
    8.0 * eps_k * (init_gap_sq + 8.0 * (mf + 4.0) * c.sigma1_g.powi(2))
        + 4.0
            * mu2
            * mu2
            * (8.0 * eps_k * (c.l1_big_g.powi(2) + c.l1_g.powi(2)) * (mf + 4.0).powi(4)
                + c.l1_g / c.lambda_g * ((3.0 + 4.0 * eps_k) * mf + eta2 * eta2 * nf / (mu2 * mu2)))
}

/// `‖y*_{η₂,μ₂}(x) − y*(x)‖²` bound: `(2L_{1,g}/λ_g)(η₂²n + μ₂²m)`.
pub fn lower_solution_gap(eta2: f64, mu2: f64, n: usize, m: usize, c: &ProblemConstants) -> f64 {
    2.0 * c.l1_g / c.lambda_g * (eta2 * eta2 * n as f64 + mu2 * mu2 * m as f64)
}

/// `√A`: smoothed versus exact hypergradient-surrogate gap.
pub fn sqrt_a(eta1: f64, mu1: f64, eta2: f64, mu2: f64, n: usize, m: usize, c: &ProblemConstants) -> f64 {
    let (nf, mf) = (n as f64, m as f64);
    c.l1_f * lower_solution_gap(eta2, mu2, n, m, c).sqrt()
        + 0.5
            * c.l1_f
            * (eta1 * p32(nf + 3.0)
                + mu1 * mu1 / eta1 * mf * nf.sqrt()
                + eta1 * eta1 / mu1 * nf * mf.sqrt()
                + mu1 * p32(mf + 3.0))
}

/// `√Ã_k = (L_{1,g}L_{0,f}/λ_g)(1 − γλ_g)^{b_k/2}`.
pub fn sqrt_a_tilde(gamma: f64, b_k: usize, c: &ProblemConstants) -> f64 {
    c.l1_g * c.l0_f / c.lambda_g * (1.0 - gamma * c.lambda_g).powf(b_k as f64 / 2.0)
}

/// `C₂ = 2L²_{0,f}(1 + L²_{1,g}/λ²_g)`.
pub fn c2(c: &ProblemConstants) -> f64 {
    2.0 * c.l0_f.powi(2) * (1.0 + c.l1_g.powi(2) / c.lambda_g.powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts() -> ProblemConstants {
        ProblemConstants {
            lambda_g: 1.0,
            l0_f: 2.0,
            l1_f: 1.0,
            l1_g: 1.0,
            l2_g: 0.0,
            l1_big_g: 1.0,
            l2_big_g: 0.0,
            sigma1_f: 0.0,
            sigma1_g: 0.3,
            sigma2_g: 0.0,
        }
    }

    #[test]
    fn value_gap_plug_in() {
        let v = value_gap_c0(2.0, 4, 9, 0.1, 0.2);
        assert!((v - 1.2649).abs() < 1e-4, "{v}");
        assert_eq!(value_gap_c0(2.0, 4, 9, 0.0, 0.0), 0.0);
    }

    #[test]
    fn gradient_moment_at_stationary_point_is_smoothing_term() {
        let b = grad_x_moment(1.0, 2, 2, 0.1, 0.1, 0.0, 0.0);
        assert!((b - (0.01 * 512.0 + 0.0001 / 0.01 * 2.0 * 36.0)).abs() < 1e-12);
        let full = grad_full_moment(1.0, 2, 2, 0.1, 0.1, 0.3, 0.7);
        let parts = grad_x_moment(1.0, 2, 2, 0.1, 0.1, 0.3, 0.7) + grad_y_moment(1.0, 2, 2, 0.1, 0.1, 0.3, 0.7);
        assert!((full - parts).abs() < 1e-9);
    }

    #[test]
    fn yy_moment_is_mirror_of_xx() {
        let h = HessianNorms { xx: 1.0, xy: 2.0, yy: 3.0 };
        let a = hessian_yy_moment(0.5, 3, 2, 0.1, 0.2, h, 1.0);
        let b = hessian_xx_moment(0.5, 2, 3, 0.2, 0.1, HessianNorms { xx: 3.0, xy: 2.0, yy: 1.0 }, 1.0);
        assert_eq!(a, b);
    }

    #[test]
    fn szhia_bias_plug_in() {
        let b = szhia_bias(0.1, 1.0, 20, 1.0);
        assert!((b - 0.1216).abs() < 1e-4);
    }

    #[test]
    fn inner_bound_bracket() {
        let c = consts();
        let b = inner_sgd_bound(0.01, 1.0, 1e-3, 4, &c);
        let expect = 0.01 * (1.0 + 8.0 * 1e-6 * 2.0 * 4096.0 + 16.0 * 8.0 * 0.09);
        assert!((b - expect).abs() < 1e-12);
    }

    #[test]
    fn sqrt_a_plug_in_scales_with_radii() {
        let c = consts();
        let p = crate::smoothing::SmoothingParams::for_budget(2, 2, 99);
        let a = sqrt_a(p.eta1, p.mu1, p.eta2, p.mu2, 2, 2, &c);
        assert!(a > 0.0 && a < 1.0);
        let half = sqrt_a(p.eta1 / 2.0, p.mu1 / 2.0, p.eta2 / 2.0, p.mu2 / 2.0, 2, 2, &c);
        assert!((half / a - 0.5).abs() < 1e-12);
    }
}
