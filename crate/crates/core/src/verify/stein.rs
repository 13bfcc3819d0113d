//! Stein's identities for a standard normal `w`:
//! `E[w q(w)] = E[∇q(w)]` and `E[(wwᵀ − I) q(w)] = E[∇²q(w)]`.

use nalgebra::{DMatrix, DVector};

use super::{BoundBundle, CheckReport};
use crate::error::Result;
use crate::rng::{fill_normal, normal_vector, stream, Phase};
use crate::smoothing::batch_moments;

/// Polynomial test functions of degree at most two.
#[derive(Debug, Clone, PartialEq)]
pub enum SteinFunction {
    Constant(f64),
    Linear(DVector<f64>),
    /// `q(w) = wᵀMw` (`M` need not be symmetric).
    Quadratic(DMatrix<f64>),
}

impl SteinFunction {
    pub fn label(&self) -> &'static str {
        match self {
            SteinFunction::Constant(_) => "constant",
            SteinFunction::Linear(_) => "linear",
            SteinFunction::Quadratic(_) => "quadratic",
        }
    }

    fn value(&self, w: &DVector<f64>) -> f64 {
        match self {
            SteinFunction::Constant(c) => *c,
            SteinFunction::Linear(b) => b.dot(w),
            SteinFunction::Quadratic(m) => w.dot(&(m * w)),
        }
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        match self {
            SteinFunction::Constant(_) => DVector::zeros(w.len()),
            SteinFunction::Linear(b) => b.clone(),
            SteinFunction::Quadratic(m) => (m + m.transpose()) * w,
        }
    }

    fn hessian(&self, d: usize) -> DMatrix<f64> {
        match self {
            SteinFunction::Quadratic(m) => m + m.transpose(),
            _ => DMatrix::zeros(d, d),
        }
    }
}

/// Paired-difference check of both identities at dimension `d`; one bundle
/// per gradient component and per upper-triangular Hessian entry.
pub fn check_stein(d: usize, q: &SteinFunction, samples: usize, seed: u64) -> Result<Vec<BoundBundle>> {
    let tri: Vec<(usize, usize)> = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
    let hess = q.hessian(d);
    let mut rng = stream(seed, Phase::Verify, 1);
    let acc = batch_moments(samples, d + tri.len(), &mut rng, |r, out| {
        let mut w = DVector::zeros(d);
        fill_normal(r, &mut w);
        let v = q.value(&w);
        let g = q.gradient(&w);
        for i in 0..d {
            out[i] = w[i] * v - g[i];
        }
        for (k, &(i, j)) in tri.iter().enumerate() {
            let delta = if i == j { 1.0 } else { 0.0 };
            out[d + k] = (w[i] * w[j] - delta) * v - hess[(i, j)];
        }
        Ok(())
    })?;
    let se = acc.std_error();
    let mut out = Vec::with_capacity(d + tri.len());
    for i in 0..d {
        out.push(BoundBundle::identity(format!("stein first-order d={d} {} [{i}]", q.label()), acc.mean[i], se[i]));
    }
    for (k, (i, j)) in tri.iter().enumerate() {
        out.push(BoundBundle::identity(format!("stein second-order d={d} {} [{i},{j}]", q.label()), acc.mean[d + k], se[d + k]));
    }
    Ok(out)
}

/// Constant, linear and quadratic test functions at `d ∈ {1, 3, 5}`.
pub fn check_stein_suite(samples: usize, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("stein");
    for d in [1usize, 3, 5] {
        let mut rng = stream(seed, Phase::Fixture, d as u64);
        let b = normal_vector(&mut rng, d);
        let m = DMatrix::from_fn(d, d, |_, _| crate::rng::normal(&mut rng));
        for (i, q) in [SteinFunction::Constant(1.5), SteinFunction::Linear(b), SteinFunction::Quadratic(m)].iter().enumerate() {
            report.bundles.extend(check_stein(d, q, samples, crate::rng::child_seed(seed, (10 * d + i) as u64))?);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_function_has_zero_sides() {
        let b = check_stein(2, &SteinFunction::Constant(3.0), 20_000, 1).unwrap();
        assert_eq!(b.len(), 2 + 3);
        assert!(b.iter().all(|x| x.pass && x.lhs_se > 0.0));
    }

    #[test]
    fn linear_function_matches_coefficients() {
        let q = SteinFunction::Linear(DVector::from_vec(vec![1.0, -2.0, 0.5]));
        assert!(check_stein(3, &q, 50_000, 2).unwrap().iter().all(|x| x.pass));
    }

    #[test]
    fn a_wrong_identity_is_caught() {
        // E[w q(w)] for q = wᵀMw is zero, so comparing it with a shifted
        // gradient must fail.
        let q = SteinFunction::Quadratic(DMatrix::identity(2, 2));
        let mut rng = stream(3, Phase::Verify, 1);
        let acc = batch_moments(50_000, 1, &mut rng, |r, out| {
            let mut w = DVector::zeros(2);
            fill_normal(r, &mut w);
            out[0] = w[0] * q.value(&w) - (q.gradient(&w)[0] + 0.1);
            Ok(())
        })
        .unwrap();
        assert!(!BoundBundle::identity("shifted", acc.mean[0], acc.std_error()[0]).pass);
    }

    #[test]
    fn suite_is_replayable() {
        let a = check_stein_suite(10_000, 5).unwrap();
        let b = check_stein_suite(10_000, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.bundles.len() >= 3);
    }
}
