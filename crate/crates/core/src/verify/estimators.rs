//! Unbiasedness of the five smoothing estimators on quadratics, whose
//! smoothed derivatives equal the exact ones.

use nalgebra::{DMatrix, DVector};

use super::fixtures::QuadForm;
use super::{BoundBundle, CheckReport};
use crate::error::Result;
use crate::problems::{random_problem, BlockPoint, Level, NoiseModel, Oracle};
use crate::rng::{child_seed, normal_vector, stream, Phase};
use crate::smoothing::{est_grad_x, est_grad_y, est_hess_xy, est_hess_yy_action, mc_smoothed_gradient};

#[derive(Debug, Clone, PartialEq)]
pub struct UnbiasednessConfig {
    pub n: usize,
    pub m: usize,
    pub eta: f64,
    pub mu: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for UnbiasednessConfig {
    fn default() -> Self {
        Self { n: 3, m: 2, eta: 0.1, mu: 0.2, samples: 1_000_000, seed: 2024 }
    }
}

struct Truth {
    gx: DVector<f64>,
    gy: DVector<f64>,
    hxy: DMatrix<f64>,
    hyy: DMatrix<f64>,
}

fn compare(report: &mut CheckReport, name: &str, est: &[f64], se: &[f64], truth: &[f64]) {
    for i in 0..truth.len() {
        report.bundles.push(BoundBundle::identity(format!("{name} [{i}]"), est[i] - truth[i], se[i]));
    }
}

fn check_oracle<O: Oracle + ?Sized>(
    report: &mut CheckReport,
    label: &str,
    o: &O,
    point: &BlockPoint,
    truth: &Truth,
    cfg: &UnbiasednessConfig,
    seed: u64,
) -> Result<()> {
    let (eta, mu, k) = (cfg.eta, cfg.mu, cfg.samples);
    let z = normal_vector(&mut stream(seed, Phase::Fixture, 3), point.m());

    let e = est_grad_x(o, point, eta, mu, &mut stream(seed, Phase::Verify, 10), k)?;
    compare(report, &format!("{label} grad_x"), e.value.as_slice(), e.std_error.as_slice(), truth.gx.as_slice());

    let e = est_grad_y(o, point, eta, mu, &mut stream(seed, Phase::Verify, 11), k)?;
    compare(report, &format!("{label} grad_y"), e.value.as_slice(), e.std_error.as_slice(), truth.gy.as_slice());

    let e = est_hess_xy(o, point, eta, mu, &mut stream(seed, Phase::Verify, 12), k)?;
    compare(report, &format!("{label} hess_xy"), e.value.as_slice(), e.std_error.as_slice(), truth.hxy.as_slice());

    let e = est_hess_yy_action(o, point, mu, eta, &z, &mut stream(seed, Phase::Verify, 13), k)?;
    let hz = &truth.hyy * &z;
    compare(report, &format!("{label} hess_yy_action"), e.value.as_slice(), e.std_error.as_slice(), hz.as_slice());

    let e = mc_smoothed_gradient(o, point, eta, mu, &mut stream(seed, Phase::Verify, 14), k)?;
    let full: Vec<f64> = truth.gx.iter().chain(truth.gy.iter()).copied().collect();
    compare(report, &format!("{label} full_gradient"), e.value.as_slice(), e.std_error.as_slice(), &full);
    Ok(())
}

/// All five estimators on a dense quadratic form with noise and on both
/// levels of a random bilevel quadratic with linear-term noise.
pub fn check_unbiasedness(cfg: &UnbiasednessConfig) -> Result<CheckReport> {
    let mut report = CheckReport::new("estimators");
    let (n, m) = (cfg.n, cfg.m);
    let mut rng = stream(cfg.seed, Phase::Fixture, 1);
    let point = BlockPoint::new(normal_vector(&mut rng, n), normal_vector(&mut rng, m))?;

    let q = QuadForm::random(n, m, 0.5, cfg.seed);
    let (gx, gy) = q.gradient(&point.x, &point.y);
    let (_, hxy, hyy) = q.blocks();
    check_oracle(&mut report, "quadform", &q, &point, &Truth { gx, gy, hxy, hyy }, cfg, child_seed(cfg.seed, 1))?;

    let prob = random_problem(n, m, 1.0, NoiseModel::LinearTerm { sigma: 0.5 }, cfg.seed)?;
    for (level, label, salt) in [(Level::Upper, "upper", 2u64), (Level::Lower, "lower", 3)] {
        let (gx, gy) = match level {
            Level::Upper => prob.upper_gradient(&point.x, &point.y),
            Level::Lower => prob.lower_gradient(&point.x, &point.y),
        };
        let (_, hxy, hyy) = prob.hessian_blocks(level);
        let truth = Truth { gx, gy, hxy, hyy };
        let seed = child_seed(cfg.seed, salt);
        match level {
            Level::Upper => check_oracle(&mut report, label, &prob.upper(), &point, &truth, cfg, seed)?,
            Level::Lower => check_oracle(&mut report, label, &prob.lower(), &point, &truth, cfg, seed)?,
        }
    }
    Ok(report)
}
