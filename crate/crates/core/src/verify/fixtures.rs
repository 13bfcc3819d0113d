//! Test functions with exactly known smoothed values, derivatives and
//! Lipschitz constants.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use super::quadrature::GaussHermite;
use crate::linalg::sym_spectral_norm;
use crate::problems::Oracle;
use crate::rng::{normal_vector, stream, Phase, Stream};

/// `Q(z, ζ) = ½ zᵀH z + hᵀz + c + σ ζ dᵀz` on `z = (x, y)`, `‖d‖ = 1`.
#[derive(Debug, Clone)]
pub struct QuadForm {
    pub n: usize,
    pub m: usize,
    pub h: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub c: f64,
    pub sigma: f64,
    pub dir: DVector<f64>,
}

impl QuadForm {
    /// Random symmetric (possibly indefinite) `H` with entries of order one.
    pub fn random(n: usize, m: usize, sigma: f64, seed: u64) -> Self {
        let d = n + m;
        let mut rng = stream(seed, Phase::Fixture, 11);
        let raw = DMatrix::from_fn(d, d, |_, _| crate::rng::normal(&mut rng));
        let h = (&raw + raw.transpose()) * (0.5 / (d as f64).sqrt());
        let lin = normal_vector(&mut rng, d);
        let dir = normal_vector(&mut rng, d).normalize();
        Self { n, m, h, lin, c: 0.7, sigma, dir }
    }

    /// `½‖(x, y)‖²`.
    pub fn half_norm(n: usize, m: usize) -> Self {
        let d = n + m;
        Self { n, m, h: DMatrix::identity(d, d), lin: DVector::zeros(d), c: 0.0, sigma: 0.0, dir: DVector::zeros(d) }
    }

    pub fn l1(&self) -> f64 {
        sym_spectral_norm(&self.h)
    }

    pub fn join(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.n + self.m, x.iter().chain(y.iter()).copied())
    }

    /// `(∇_x q, ∇_y q)` of the mean function (also the smoothed gradient).
    pub fn gradient(&self, x: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let g = &self.h * self.join(x, y) + &self.lin;
        (g.rows(0, self.n).into_owned(), g.rows(self.n, self.m).into_owned())
    }

    /// Hessian blocks `(xx, xy, yy)`, `xy` being n×m.
    pub fn blocks(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (n, m) = (self.n, self.m);
        (
            self.h.view((0, 0), (n, n)).into_owned(),
            self.h.view((0, n), (n, m)).into_owned(),
            self.h.view((n, n), (m, m)).into_owned(),
        )
    }
}

impl Oracle for QuadForm {
    fn dim_x(&self) -> usize {
        self.n
    }
    fn dim_y(&self) -> usize {
        self.m
    }
    fn draw_noise(&self, rng: &mut Stream) -> f64 {
        if self.sigma > 0.0 {
            crate::rng::normal(rng)
        } else {
            0.0
        }
    }
    fn value(&self, x: &DVector<f64>, y: &DVector<f64>, noise: f64) -> f64 {
        let n = self.n;
        let at = |i: usize| if i < n { x[i] } else { y[i - n] };
        let d = n + self.m;
        let mut quad = 0.0;
        let mut lin = 0.0;
        let mut noisy = 0.0;
        for i in 0..d {
            let zi = at(i);
            let mut row = 0.5 * self.h[(i, i)] * zi;
            for j in 0..i {
                row += self.h[(i, j)] * at(j);
            }
            quad += zi * row;
            lin += self.lin[i] * zi;
            noisy += self.dir[i] * zi;
        }
        quad + lin + self.c + self.sigma * noise * noisy
    }
}

/// `L₀ ‖(x, y)‖`, Lipschitz with constant `L₀` and nowhere smoother.
#[derive(Debug, Clone, Copy)]
pub struct NormFn {
    pub n: usize,
    pub m: usize,
    pub l0: f64,
}

impl Oracle for NormFn {
    fn dim_x(&self) -> usize {
        self.n
    }
    fn dim_y(&self) -> usize {
        self.m
    }
    fn value(&self, x: &DVector<f64>, y: &DVector<f64>, _noise: f64) -> f64 {
        self.l0 * (x.norm_squared() + y.norm_squared()).sqrt()
    }
}

fn log_cosh(a: f64) -> f64 {
    let b = a.abs();
    b + (-2.0 * b).exp().ln_1p() - std::f64::consts::LN_2
}

fn sech2(a: f64) -> f64 {
    let t = a.tanh();
    1.0 - t * t
}

/// Ridge sum `Q(z, ζ) = Σₖ cₖ (1 + τ ζₖ) log cosh(wₖᵀ z)` with Rademacher `ζₖ`.
///
/// Along each ridge the perturbed argument `wₖᵀ(z + (ηu, μv))` is normal
/// with variance `sₖ² = η²‖wₖₓ‖² + μ²‖wₖᵧ‖²`, so every smoothed quantity is
/// a sum of one-dimensional Gaussian expectations.
#[derive(Debug, Clone)]
pub struct RidgeLogCosh {
    pub n: usize,
    pub m: usize,
    pub w: Vec<DVector<f64>>,
    pub c: Vec<f64>,
    pub tau: f64,
    quad: GaussHermite,
}

impl RidgeLogCosh {
    pub fn random(n: usize, m: usize, ridges: usize, tau: f64, seed: u64) -> Self {
        assert!(ridges <= 16, "sign patterns are packed into 16 bits");
        let mut rng = stream(seed, Phase::Fixture, 12);
        let w = (0..ridges).map(|_| normal_vector(&mut rng, n + m)).collect();
        let c = (0..ridges).map(|k| 0.5 + 0.5 * k as f64 / ridges as f64).collect();
        Self { n, m, w, c, tau, quad: GaussHermite::new(60) }
    }

    pub fn ridges(&self) -> usize {
        self.w.len()
    }

    /// Coefficients `cₖ(1 + τ ζₖ)` for sign pattern `pattern` (bit k set ⇒ ζₖ = −1);
    /// `None` gives the mean coefficients.
    pub fn coefficients(&self, pattern: Option<u32>) -> Vec<f64> {
        self.c
            .iter()
            .enumerate()
            .map(|(k, &ck)| match pattern {
                None => ck,
                Some(p) => ck * (1.0 + self.tau * if p >> k & 1 == 1 { -1.0 } else { 1.0 }),
            })
            .collect()
    }

    fn spread(&self, k: usize, eta: f64, mu: f64) -> f64 {
        let w = &self.w[k];
        let (wx, wy) = (w.rows(0, self.n).norm_squared(), w.rows(self.n, self.m).norm_squared());
        (eta * eta * wx + mu * mu * wy).sqrt()
    }

    fn arg(&self, k: usize, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let w = &self.w[k];
        w.rows(0, self.n).dot(x) + w.rows(self.n, self.m).dot(y)
    }

    /// `q_{η,μ}` (exact `q` at `η = μ = 0`).
    pub fn smoothed_value(&self, x: &DVector<f64>, y: &DVector<f64>, eta: f64, mu: f64, pattern: Option<u32>) -> f64 {
        let cs = self.coefficients(pattern);
        (0..self.ridges()).map(|k| cs[k] * self.quad.expect(self.arg(k, x, y), self.spread(k, eta, mu), log_cosh)).sum()
    }

    /// Full smoothed gradient in `ℝ^{n+m}`.
    pub fn smoothed_gradient(&self, x: &DVector<f64>, y: &DVector<f64>, eta: f64, mu: f64, pattern: Option<u32>) -> DVector<f64> {
        let cs = self.coefficients(pattern);
        let mut g = DVector::zeros(self.n + self.m);
        for (k, c) in cs.iter().enumerate() {
            let e = self.quad.expect(self.arg(k, x, y), self.spread(k, eta, mu), f64::tanh);
            g.axpy(c * e, &self.w[k], 1.0);
        }
        g
    }

    /// Full smoothed Hessian in `ℝ^{(n+m)×(n+m)}`.
    pub fn smoothed_hessian(&self, x: &DVector<f64>, y: &DVector<f64>, eta: f64, mu: f64, pattern: Option<u32>) -> DMatrix<f64> {
        let cs = self.coefficients(pattern);
        let d = self.n + self.m;
        let mut h = DMatrix::zeros(d, d);
        for (k, c) in cs.iter().enumerate() {
            let e = self.quad.expect(self.arg(k, x, y), self.spread(k, eta, mu), sech2);
            h.ger(c * e, &self.w[k], &self.w[k], 1.0);
        }
        h
    }

    /// Lipschitz constant of `q`: `Σ cₖ‖wₖ‖`.
    pub fn l0(&self) -> f64 {
        self.c.iter().zip(&self.w).map(|(c, w)| c * w.norm()).sum()
    }

    /// Gradient Lipschitz constant of `q`: `λ_max(Σ cₖ wₖwₖᵀ)` (`0 ≤ sech² ≤ 1`).
    pub fn l1(&self) -> f64 {
        let d = self.n + self.m;
        let mut s = DMatrix::zeros(d, d);
        for (c, w) in self.c.iter().zip(&self.w) {
            s.ger(*c, w, w, 1.0);
        }
        sym_spectral_norm(&s)
    }

    /// Hessian Lipschitz constant of `q`: `max|(sech²)′| Σ cₖ‖wₖ‖³`.
    pub fn l2(&self) -> f64 {
        let max_d3 = 4.0 / (3.0 * 3f64.sqrt());
        max_d3 * self.c.iter().zip(&self.w).map(|(c, w)| c * w.norm().powi(3)).sum::<f64>()
    }

    /// `sup E‖∇Q − ∇q‖² ≤ τ² Σ cₖ²‖wₖ‖²` (independent signs, `tanh² ≤ 1`).
    pub fn sigma1_sq(&self) -> f64 {
        self.tau * self.tau * self.c.iter().zip(&self.w).map(|(c, w)| c * c * w.norm_squared()).sum::<f64>()
    }

    /// `sup E‖∇²Q − ∇²q‖² ≤ τ² Σ cₖ²‖wₖ‖⁴`.
    pub fn sigma2_sq(&self) -> f64 {
        self.tau * self.tau * self.c.iter().zip(&self.w).map(|(c, w)| c * c * w.norm_squared().powi(2)).sum::<f64>()
    }
}

impl Oracle for RidgeLogCosh {
    fn dim_x(&self) -> usize {
        self.n
    }
    fn dim_y(&self) -> usize {
        self.m
    }
    fn draw_noise(&self, rng: &mut Stream) -> f64 {
        if self.tau > 0.0 {
            (rng.next_u32() & 0xFFFF) as f64
        } else {
            0.0
        }
    }
    fn value(&self, x: &DVector<f64>, y: &DVector<f64>, noise: f64) -> f64 {
        let pattern = if self.tau > 0.0 { Some(noise as u32) } else { None };
        let cs = self.coefficients(pattern);
        (0..self.ridges()).map(|k| cs[k] * log_cosh(self.arg(k, x, y))).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::BlockPoint;
    use crate::smoothing::{est_grad_x, mc_smoothed_gradient};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn quad_form_value_matches_matrix_form() {
        let q = QuadForm::random(2, 3, 0.4, 1);
        let (x, y) = (v(&[0.3, -1.0]), v(&[0.2, 0.5, 2.0]));
        let z = q.join(&x, &y);
        let direct = 0.5 * z.dot(&(&q.h * &z)) + q.lin.dot(&z) + q.c + 0.4 * 1.3 * q.dir.dot(&z);
        assert!((q.value(&x, &y, 1.3) - direct).abs() < 1e-12);
        let (gx, gy) = q.gradient(&x, &y);
        let eps = 1e-6;
        let mut xp = x.clone();
        xp[1] += eps;
        let fd = (q.value(&xp, &y, 0.0) - q.value(&x, &y, 0.0)) / eps;
        assert!((fd - gx[1]).abs() < 1e-4);
        assert_eq!(gy.len(), 3);
    }

    #[test]
    fn ridge_exact_derivatives_match_finite_differences() {
        let r = RidgeLogCosh::random(2, 2, 3, 0.0, 4);
        let (x, y) = (v(&[0.1, -0.4]), v(&[0.7, 0.2]));
        let g = r.smoothed_gradient(&x, &y, 0.0, 0.0, None);
        let h = r.smoothed_hessian(&x, &y, 0.0, 0.0, None);
        let eps = 1e-5;
        let mut yp = y.clone();
        yp[0] += eps;
        let mut ym = y.clone();
        ym[0] -= eps;
        let fd = (r.value(&x, &yp, 0.0) - r.value(&x, &ym, 0.0)) / (2.0 * eps);
        assert!((fd - g[2]).abs() < 1e-8, "{fd} vs {}", g[2]);
        let gp = r.smoothed_gradient(&x, &yp, 0.0, 0.0, None);
        let gm = r.smoothed_gradient(&x, &ym, 0.0, 0.0, None);
        let fdh = (gp - gm) / (2.0 * eps);
        for i in 0..4 {
            assert!((fdh[i] - h[(i, 2)]).abs() < 1e-7);
        }
        assert!((r.smoothed_value(&x, &y, 0.0, 0.0, None) - r.value(&x, &y, 0.0)).abs() < 1e-14);
    }

    #[test]
    fn ridge_smoothed_gradient_matches_monte_carlo() {
        let r = RidgeLogCosh::random(2, 2, 3, 0.5, 4);
        let p = BlockPoint::from_slices(&[0.1, -0.4], &[0.7, 0.2]).unwrap();
        let exact = r.smoothed_gradient(&p.x, &p.y, 0.3, 0.2, None);
        let est = mc_smoothed_gradient(&r, &p, 0.3, 0.2, &mut stream(3, Phase::Verify, 0), 200_000).unwrap();
        for i in 0..4 {
            assert!((est.value[i] - exact[i]).abs() < 4.0 * est.std_error[i], "coord {i}");
        }
        let gx = est_grad_x(&r, &p, 0.3, 0.2, &mut stream(5, Phase::Verify, 0), 200_000).unwrap();
        for i in 0..2 {
            assert!((gx.value[i] - exact[i]).abs() < 4.0 * gx.std_error[i]);
        }
    }

    #[test]
    fn ridge_constants_bound_the_derivatives() {
        let r = RidgeLogCosh::random(3, 2, 4, 0.0, 9);
        let mut rng = stream(1, Phase::Verify, 0);
        for _ in 0..50 {
            let a = normal_vector(&mut rng, 5) * 2.0;
            let b = normal_vector(&mut rng, 5) * 2.0;
            let (ax, ay) = (a.rows(0, 3).into_owned(), a.rows(3, 2).into_owned());
            let (bx, by) = (b.rows(0, 3).into_owned(), b.rows(3, 2).into_owned());
            let dist = (&a - &b).norm();
            assert!((r.value(&ax, &ay, 0.0) - r.value(&bx, &by, 0.0)).abs() <= r.l0() * dist + 1e-12);
            let dg = (r.smoothed_gradient(&ax, &ay, 0.0, 0.0, None) - r.smoothed_gradient(&bx, &by, 0.0, 0.0, None)).norm();
            assert!(dg <= r.l1() * dist + 1e-12);
            let dh =
                sym_spectral_norm(&(r.smoothed_hessian(&ax, &ay, 0.0, 0.0, None) - r.smoothed_hessian(&bx, &by, 0.0, 0.0, None)));
            assert!(dh <= r.l2() * dist + 1e-12);
        }
    }
}
