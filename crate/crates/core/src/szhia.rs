//! Stochastic zeroth-order Hessian-inverse approximation.
//!
//! SGD on `J(z) = ½ zᵀ ∇²_yy g_{η₂,μ₂} z − ∇_y f_{η₁,μ₁}ᵀ z` at a fixed
//! `(x̄, ȳ)`, whose minimizer is `z̄ = [∇²_yy g_{η₂,μ₂}]⁻¹ ∇_y f_{η₁,μ₁}`.
//! Each step draws one Hessian-action stencil on `G` (3 evaluations) and one
//! forward difference on `F` (2 evaluations).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::problems::{Oracle, ProblemConstants};
use crate::rng::Stream;
use crate::smoothing::{grad_y_sample, hess_yy_action_sample, SmoothingParams, Stencil};

/// Iterates beyond `DIVERGENCE_FACTOR · (1 + scale)` abort the run.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// `V_H = L²(m+2)((m+4)² + m)/4` bounds `E‖Hz‖²/‖z‖²` for the single-sample
/// Hessian action `H` of a lower level with curvature at most `L` (exact for
/// `A = L·I`); returns `λ_g/(2V_H)`, at which the iterates contract in mean
/// square by at least `1 − 3γλ_g/2` per step.
pub fn mean_square_gamma(lambda_g: f64, l1_g: f64, m: usize) -> f64 {
    let m = m as f64;
    let v_h = l1_g * l1_g * (m + 2.0) * ((m + 4.0).powi(2) + m) / 4.0;
    lambda_g / (2.0 * v_h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SzhiaConfig {
    pub gamma: f64,
    pub iterations: usize,
    /// Starting point; zero when absent.
    #[serde(default)]
    pub z0: Option<Vec<f64>>,
    /// Samples averaged per step. The analyzed method uses 1; larger values
    /// are a verification convenience.
    #[serde(default = "one")]
    pub batch: usize,
    /// Expected size of `z̄`, used to scale the divergence guard.
    #[serde(default)]
    pub z_scale: f64,
}

fn one() -> usize {
    1
}

impl SzhiaConfig {
    pub fn new(gamma: f64, iterations: usize) -> Self {
        Self { gamma, iterations, z0: None, batch: 1, z_scale: 0.0 }
    }

    /// Checks `0 < γ < 2/(λ_g + L_{1,g})`. The second step-size condition of
    /// the analysis involves an unspecified constant and is left to the
    /// caller; the divergence guard catches violations.
    pub fn validate(&self, constants: &ProblemConstants) -> Result<()> {
        let limit = 2.0 / (constants.lambda_g + constants.l1_g);
        if !(self.gamma > 0.0 && self.gamma < limit) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in (0, 2/(lambda_g + L1_g)) = (0, {limit}), got {}",
                self.gamma
            )));
        }
        if self.batch == 0 {
            return Err(Error::InvalidParameter("SZHIA batch must be >= 1".into()));
        }
        if !(self.z_scale >= 0.0 && self.z_scale.is_finite()) {
            return Err(Error::InvalidParameter("z_scale must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SzhiaResult {
    pub z: DVector<f64>,
    pub draws_f: u64,
    pub draws_g: u64,
}

/// Scratch space for repeated `∇̃J` samples.
pub struct GradJ {
    hess: Stencil,
    grad: Stencil,
    hz: DVector<f64>,
    gf: DVector<f64>,
}

impl GradJ {
    pub fn new(n: usize, m: usize) -> Self {
        Self { hess: Stencil::new(n, m), grad: Stencil::new(n, m), hz: DVector::zeros(m), gf: DVector::zeros(m) }
    }

    /// One draw of `∇̃J(z)` into `out`: first the `G` stencil `(u, v, ζ)`,
    /// then the `F` difference `(u′, v′, ξ)`; `u′` is skipped when `η₁ = 0`.
    #[allow(clippy::too_many_arguments)]
    pub fn sample<F: Oracle + ?Sized, G: Oracle + ?Sized>(
        &mut self,
        upper: &F,
        lower: &G,
        xbar: &DVector<f64>,
        ybar: &DVector<f64>,
        params: &SmoothingParams,
        z: &DVector<f64>,
        rng: &mut Stream,
        out: &mut DVector<f64>,
    ) -> Result<()> {
        hess_yy_action_sample(lower, xbar, ybar, params.eta2, params.mu2, z, &mut self.hess, rng, &mut self.hz)?;
        grad_y_sample(upper, xbar, ybar, params.eta1, params.mu1, &mut self.grad, rng, &mut self.gf)?;
        out.copy_from(&self.hz);
        *out -= &self.gf;
        Ok(())
    }
}

fn check_radii(params: &SmoothingParams) -> Result<()> {
    params.validate()?;
    if params.mu1 == 0.0 || params.mu2 == 0.0 {
        return Err(Error::InvalidParameter("SZHIA needs mu1 > 0 and mu2 > 0".into()));
    }
    Ok(())
}

/// A single draw of `∇̃J(z)`; unbiased for `∇²_yy g_{η₂,μ₂}(x̄,ȳ) z − ∇_y f_{η₁,μ₁}(x̄,ȳ)`.
#[allow(clippy::too_many_arguments)]
pub fn grad_j_sample<F: Oracle + ?Sized, G: Oracle + ?Sized>(
    upper: &F,
    lower: &G,
    xbar: &DVector<f64>,
    ybar: &DVector<f64>,
    params: &SmoothingParams,
    z: &DVector<f64>,
    rng: &mut Stream,
) -> Result<DVector<f64>> {
    check_radii(params)?;
    check_dim("x block", lower.dim_x(), xbar.len())?;
    check_dim("y block", lower.dim_y(), ybar.len())?;
    check_dim("z", lower.dim_y(), z.len())?;
    let mut out = DVector::zeros(z.len());
    GradJ::new(xbar.len(), ybar.len()).sample(upper, lower, xbar, ybar, params, z, rng, &mut out)?;
    Ok(out)
}

/// Run `T` SZHIA steps `z ← z − γ ∇̃J(z)` from `z₀`.
#[allow(clippy::too_many_arguments)]
pub fn run_szhia<F: Oracle + ?Sized, G: Oracle + ?Sized>(
    upper: &F,
    lower: &G,
    xbar: &DVector<f64>,
    ybar: &DVector<f64>,
    params: &SmoothingParams,
    config: &SzhiaConfig,
    constants: &ProblemConstants,
    rng: &mut Stream,
) -> Result<SzhiaResult> {
    run_szhia_observed(upper, lower, xbar, ybar, params, config, constants, rng, |_, _| {})
}

/// As [`run_szhia`], calling `observe(τ, z_τ)` for `τ = 0..=T`.
#[allow(clippy::too_many_arguments)]
pub fn run_szhia_observed<F, G, Obs>(
    upper: &F,
    lower: &G,
    xbar: &DVector<f64>,
    ybar: &DVector<f64>,
    params: &SmoothingParams,
    config: &SzhiaConfig,
    constants: &ProblemConstants,
    rng: &mut Stream,
    mut observe: Obs,
) -> Result<SzhiaResult>
where
    F: Oracle + ?Sized,
    G: Oracle + ?Sized,
    Obs: FnMut(usize, &DVector<f64>),
{
    config.validate(constants)?;
    check_radii(params)?;
    let (n, m) = (lower.dim_x(), lower.dim_y());
    check_dim("x block", n, xbar.len())?;
    check_dim("y block", m, ybar.len())?;
    check_dim("upper x block", n, upper.dim_x())?;
    check_dim("upper y block", m, upper.dim_y())?;
    let mut z = match &config.z0 {
        Some(z0) => {
            check_dim("z0", m, z0.len())?;
            DVector::from_column_slice(z0)
        }
        None => DVector::zeros(m),
    };
    observe(0, &z);
    let limit = DIVERGENCE_FACTOR * (1.0 + config.z_scale);
    let mut gj = GradJ::new(n, m);
    let mut sample = DVector::zeros(m);
    let mut step = DVector::zeros(m);
    let scale = config.gamma / config.batch as f64;
    for tau in 0..config.iterations {
        step.fill(0.0);
        for _ in 0..config.batch {
            gj.sample(upper, lower, xbar, ybar, params, &z, rng, &mut sample)?;
            step += &sample;
        }
        z.axpy(-scale, &step, 1.0);
        let norm = z.norm();
        if !(norm <= limit) {
            return Err(Error::Divergence(format!(
                "SZHIA iterate norm {norm:e} exceeded {limit:e} at step {}; reduce gamma",
                tau + 1
            )));
        }
        observe(tau + 1, &z);
    }
    let draws = (config.iterations * config.batch) as u64;
    Ok(SzhiaResult { z, draws_f: 2 * draws, draws_g: 3 * draws })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{FnOracle, NoiseModel, QuadraticBilevel, QuadraticParts};
    use crate::rng::{stream, Phase};
    use crate::stats::VecMoments;
    use nalgebra::DMatrix;

    fn fixture(a: &[f64], s: &[f64], noise: NoiseModel) -> QuadraticBilevel {
        let m = a.len();
        let mut parts = QuadraticParts::zeros(1, m);
        parts.a = DMatrix::from_diagonal(&DVector::from_column_slice(a));
        parts.s = DVector::from_column_slice(s);
        parts.noise = noise;
        QuadraticBilevel::new(parts).unwrap()
    }

    fn params(mu2: f64) -> SmoothingParams {
        SmoothingParams::new(0.0, 0.01, 0.0, mu2).unwrap()
    }

    #[test]
    fn hessian_action_second_moment_matches_v_h() {
        // A = I, m = 2: E‖H e₁‖² = (m+2)((m+4)² + m)/4 = 38.
        let prob = fixture(&[1.0, 1.0], &[0.0, 0.0], NoiseModel::None);
        let (x, y) = (DVector::zeros(1), DVector::zeros(2));
        let z = DVector::from_vec(vec![1.0, 0.0]);
        let mut st = Stencil::new(1, 2);
        let mut rng = stream(3, Phase::Verify, 0);
        let mut out = DVector::zeros(2);
        let mut acc = crate::stats::Moments::default();
        for _ in 0..400_000 {
            hess_yy_action_sample(&prob.lower(), &x, &y, 0.0, 1e-3, &z, &mut st, &mut rng, &mut out).unwrap();
            acc.push(out.norm_squared());
        }
        assert!((acc.mean - 38.0).abs() < 4.0 * acc.std_error() + 0.05, "{} ± {}", acc.mean, acc.std_error());
        assert!((mean_square_gamma(1.0, 1.0, 2) - 1.0 / 76.0).abs() < 1e-15);
    }

    #[test]
    fn zero_iterations_return_start() {
        let prob = fixture(&[2.0, 1.0], &[1.0, 1.0], NoiseModel::None);
        let mut cfg = SzhiaConfig::new(0.1, 0);
        cfg.z0 = Some(vec![0.3, -0.2]);
        let c = prob.constants(1.0);
        let x = DVector::zeros(1);
        let y = DVector::zeros(2);
        let res =
            run_szhia(&prob.upper(), &prob.lower(), &x, &y, &params(1e-3), &cfg, &c, &mut stream(0, Phase::Szhia, 0)).unwrap();
        assert_eq!(res.z, DVector::from_vec(vec![0.3, -0.2]));
        assert_eq!((res.draws_f, res.draws_g), (0, 0));
    }

    #[test]
    fn accounting_and_step_validation() {
        let prob = fixture(&[2.0, 1.0], &[1.0, 1.0], NoiseModel::None);
        let c = prob.constants(1.0);
        let x = DVector::zeros(1);
        let y = DVector::zeros(2);
        let res = run_szhia(
            &prob.upper(),
            &prob.lower(),
            &x,
            &y,
            &params(1e-3),
            &SzhiaConfig::new(0.1, 25),
            &c,
            &mut stream(0, Phase::Szhia, 0),
        )
        .unwrap();
        assert_eq!((res.draws_f, res.draws_g), (50, 75));
        // 2/(λ + L) = 2/3
        let bad = SzhiaConfig::new(0.7, 5);
        assert!(
            run_szhia(&prob.upper(), &prob.lower(), &x, &y, &params(1e-3), &bad, &c, &mut stream(0, Phase::Szhia, 0)).is_err()
        );
        let zero_mu = SmoothingParams::new(0.0, 0.0, 0.0, 0.1).unwrap();
        assert!(grad_j_sample(&prob.upper(), &prob.lower(), &x, &y, &zero_mu, &y, &mut stream(0, Phase::Szhia, 0)).is_err());
    }

    #[test]
    fn constant_functions_give_zero_direction() {
        let f = FnOracle::new(1, 2, |_, _| 3.0);
        let g = FnOracle::new(1, 2, |_, _| -1.0);
        let x = DVector::zeros(1);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let z = DVector::from_vec(vec![0.5, 0.5]);
        let mut rng = stream(1, Phase::Szhia, 0);
        for _ in 0..20 {
            let d = grad_j_sample(&f, &g, &x, &y, &params(0.1), &z, &mut rng).unwrap();
            assert_eq!(d, DVector::zeros(2));
        }
    }

    #[test]
    fn direction_at_origin_is_minus_upper_gradient() {
        let prob = fixture(&[1.0, 1.0], &[1.0, 1.0], NoiseModel::None);
        let x = DVector::zeros(1);
        let y = DVector::zeros(2);
        let z = DVector::zeros(2);
        let mut rng = stream(2, Phase::Szhia, 0);
        let mut acc = VecMoments::new(2);
        for _ in 0..200_000 {
            acc.push(&grad_j_sample(&prob.upper(), &prob.lower(), &x, &y, &params(0.1), &z, &mut rng).unwrap());
        }
        let se = acc.std_error();
        for i in 0..2 {
            assert!((acc.mean[i] + 1.0).abs() <= 4.0 * se[i]);
        }
    }

    #[test]
    fn direction_vanishes_at_target() {
        let prob = fixture(&[1.0, 1.0], &[1.0, -2.0], NoiseModel::AdditiveValue { sigma: 0.3 });
        let x = DVector::zeros(1);
        let y = DVector::from_vec(vec![0.2, 0.1]);
        let zbar = prob.hessian_inverse_product(&y);
        let mut rng = stream(3, Phase::Szhia, 0);
        let mut acc = VecMoments::new(2);
        for _ in 0..200_000 {
            acc.push(&grad_j_sample(&prob.upper(), &prob.lower(), &x, &y, &params(0.1), &zbar, &mut rng).unwrap());
        }
        let se = acc.std_error();
        for i in 0..2 {
            assert!(acc.mean[i].abs() <= 4.0 * se[i]);
        }
    }

    #[test]
    fn divergence_guard_trips() {
        // gamma inside the checked bound but the stochastic Hessian makes the
        // mean square blow up
        let prob = fixture(&[1.0; 8], &[1.0; 8], NoiseModel::None);
        let c = prob.constants(1.0);
        let x = DVector::zeros(1);
        let y = DVector::zeros(8);
        let cfg = SzhiaConfig::new(0.9, 100_000);
        let err =
            run_szhia(&prob.upper(), &prob.lower(), &x, &y, &params(0.1), &cfg, &c, &mut stream(4, Phase::Szhia, 0)).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)));
    }

    #[test]
    fn large_batch_recovers_target() {
        let prob = fixture(&[2.0, 1.0], &[1.0, 1.0], NoiseModel::None);
        let c = prob.constants(1.0);
        let x = DVector::zeros(1);
        let y = DVector::zeros(2);
        let mut cfg = SzhiaConfig::new(0.1, 200);
        cfg.batch = 20_000;
        let res =
            run_szhia(&prob.upper(), &prob.lower(), &x, &y, &params(1e-3), &cfg, &c, &mut stream(5, Phase::Szhia, 0)).unwrap();
        assert!((res.z[0] - 0.5).abs() < 0.03 && (res.z[1] - 1.0).abs() < 0.03, "{}", res.z);
    }
}
