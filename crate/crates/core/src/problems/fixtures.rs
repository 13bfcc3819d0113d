//! Seeded fixture generators.

use nalgebra::{DMatrix, DVector};

use super::quadratic::{QuadraticBilevel, QuadraticParts};
use super::NoiseModel;
use crate::error::Result;
use crate::rng::{normal, stream, Phase, Stream};

fn normal_matrix(rng: &mut Stream, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| normal(rng))
}

/// `MᵀM + λ I` with standard-normal `M`: SPD with `λ_min ≥ λ`.
pub fn random_spd(rng: &mut Stream, dim: usize, lambda: f64) -> DMatrix<f64> {
    let m = normal_matrix(rng, dim, dim) / (dim as f64).sqrt();
    let mut a = m.transpose() * m;
    a += DMatrix::identity(dim, dim) * lambda;
    (&a + a.transpose()) * 0.5
}

fn random_psd(rng: &mut Stream, dim: usize) -> DMatrix<f64> {
    random_spd(rng, dim, 0.0)
}

fn random_vector(rng: &mut Stream, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| normal(rng))
}

/// Fully coupled random fixture: every coefficient is drawn, `P`, `Q` PSD.
pub fn random_problem(n: usize, m: usize, lambda_g: f64, noise: NoiseModel, seed: u64) -> Result<QuadraticBilevel> {
    let mut rng = stream(seed, Phase::Fixture, 0);
    let mut parts = QuadraticParts::zeros(n, m);
    parts.a = random_spd(&mut rng, m, lambda_g);
    parts.b_mat = normal_matrix(&mut rng, m, n) / (n as f64).sqrt();
    parts.b_vec = random_vector(&mut rng, m);
    parts.p = random_spd(&mut rng, n, 0.1);
    parts.q = random_psd(&mut rng, m);
    parts.r = random_vector(&mut rng, n);
    parts.s = random_vector(&mut rng, m);
    parts.noise = noise;
    QuadraticBilevel::new(parts)
}

/// `f = ½‖x‖²`, `g = ½‖y‖²`: no coupling between the levels.
pub fn decoupled_problem(n: usize, m: usize, noise: NoiseModel) -> Result<QuadraticBilevel> {
    let mut parts = QuadraticParts::zeros(n, m);
    parts.p = DMatrix::identity(n, n);
    parts.noise = noise;
    QuadraticBilevel::new(parts)
}

/// Coupled fixture whose value function has Hessian exactly `curvature · I`.
///
/// `P` is set to `curvature·I − BᵀA⁻¹QA⁻¹B`, so a `curvature` below the top
/// eigenvalue of the correction makes `f` nonconvex in `x` while `ψ` stays a
/// well-conditioned quadratic. The minimizer of `ψ` on `ℝⁿ` is `x_star`.
pub fn prescribed_curvature_problem(
    n: usize,
    m: usize,
    lambda_g: f64,
    curvature: f64,
    x_star: &DVector<f64>,
    noise: NoiseModel,
    seed: u64,
) -> Result<QuadraticBilevel> {
    let mut rng = stream(seed, Phase::Fixture, 1);
    let mut parts = QuadraticParts::zeros(n, m);
    parts.a = random_spd(&mut rng, m, lambda_g);
    parts.b_mat = normal_matrix(&mut rng, m, n) / (n as f64).sqrt();
    parts.b_vec = random_vector(&mut rng, m);
    parts.q = random_psd(&mut rng, m);
    parts.s = random_vector(&mut rng, m);
    let tmp = QuadraticBilevel::new(parts.clone())?;
    let ainv_b = tmp.solve_lower_hessian_matrix(&parts.b_mat);
    let k = ainv_b.transpose() * &parts.q * &ainv_b;
    let p = DMatrix::identity(n, n) * curvature - k;
    parts.p = (&p + p.transpose()) * 0.5;
    // choose r so that ∇ψ(x_star) = 0
    parts.r = DVector::zeros(n);
    let tmp = QuadraticBilevel::new(parts.clone())?;
    parts.r = -tmp.hypergradient(x_star);
    parts.noise = noise;
    QuadraticBilevel::new(parts)
}

/// Coupled fixture with a linear upper level (`P = Q = 0`), so `ψ` is linear
/// with constant gradient `r + BᵀA⁻¹s`.
pub fn linear_upper_problem(n: usize, m: usize, lambda_g: f64, noise: NoiseModel, seed: u64) -> Result<QuadraticBilevel> {
    let mut rng = stream(seed, Phase::Fixture, 2);
    let mut parts = QuadraticParts::zeros(n, m);
    parts.a = random_spd(&mut rng, m, lambda_g);
    parts.b_mat = normal_matrix(&mut rng, m, n) / (n as f64).sqrt();
    parts.b_vec = random_vector(&mut rng, m);
    parts.r = random_vector(&mut rng, n);
    parts.s = random_vector(&mut rng, m);
    parts.noise = noise;
    QuadraticBilevel::new(parts)
}

/// `A = λ_g I`, `B = coupling · N(0, 1)/√n`, `Q = q I` and
/// `P = curvature·I − BᵀA⁻¹QA⁻¹B`, so `∇²ψ = curvature·I`; `r` puts the
/// unconstrained minimizer of `ψ` at `x_star`.
#[allow(clippy::too_many_arguments)]
pub fn coupled_problem(
    n: usize,
    m: usize,
    lambda_g: f64,
    curvature: f64,
    coupling: f64,
    q: f64,
    x_star: &DVector<f64>,
    noise: NoiseModel,
    seed: u64,
) -> Result<QuadraticBilevel> {
    let mut rng = stream(seed, Phase::Fixture, 9);
    let mut parts = QuadraticParts::zeros(n, m);
    parts.a = DMatrix::identity(m, m) * lambda_g;
    parts.b_mat = normal_matrix(&mut rng, m, n) * (coupling / (n as f64).sqrt());
    parts.b_vec = random_vector(&mut rng, m);
    parts.q = DMatrix::identity(m, m) * q;
    parts.s = random_vector(&mut rng, m);
    let k = parts.b_mat.transpose() * &parts.b_mat * (q / (lambda_g * lambda_g));
    parts.p = DMatrix::identity(n, n) * curvature - k;
    let tmp = QuadraticBilevel::new(parts.clone())?;
    parts.r = -tmp.hypergradient(x_star);
    parts.noise = noise;
    QuadraticBilevel::new(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eig_range;

    #[test]
    fn random_spd_respects_modulus() {
        let mut rng = stream(1, Phase::Fixture, 0);
        for dim in 1..6 {
            let a = random_spd(&mut rng, dim, 0.3);
            let (lo, _) = eig_range(&a);
            assert!(lo >= 0.3 - 1e-12);
        }
    }

    #[test]
    fn fixtures_are_reproducible() {
        let a = random_problem(3, 2, 1.0, NoiseModel::None, 9).unwrap();
        let b = random_problem(3, 2, 1.0, NoiseModel::None, 9).unwrap();
        assert_eq!(a.parts(), b.parts());
    }

    #[test]
    fn prescribed_curvature_is_exact() {
        let xs = DVector::from_vec(vec![0.5, -0.25]);
        let prob = prescribed_curvature_problem(2, 3, 1.0, 0.05, &xs, NoiseModel::None, 4).unwrap();
        let (lo, hi) = prob.psi_curvature();
        assert!((lo - 0.05).abs() < 1e-10 && (hi - 0.05).abs() < 1e-10);
        assert!(prob.hypergradient(&xs).amax() < 1e-10);
        let (p_lo, _) = eig_range(&prob.parts().p);
        assert!(p_lo < 0.0, "upper level should be nonconvex in x");
    }

    #[test]
    fn linear_upper_has_constant_hypergradient() {
        let prob = linear_upper_problem(2, 2, 1.0, NoiseModel::None, 3).unwrap();
        let g0 = prob.hypergradient(&DVector::zeros(2));
        let g1 = prob.hypergradient(&DVector::from_vec(vec![3.0, -2.0]));
        assert!((g0 - g1).amax() < 1e-12);
    }
}
