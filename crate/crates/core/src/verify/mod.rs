//! Statistical verification suite.
//!
//! Every check compares a Monte-Carlo (or exact) left-hand side against a
//! plug-in right-hand side and reports a [`BoundBundle`], or fits a
//! log-linear rate and reports a [`RateFit`]. Seeds are fixed, so a failing
//! bundle is a defect, not a flake.

pub mod bounds;
pub mod fixtures;
pub mod quadrature;

mod estimators;
mod hypergrad;
mod inner;
mod moments;
mod rates;
mod smoothing_bounds;
mod stein;
mod szhia_check;

pub use estimators::{check_unbiasedness, UnbiasednessConfig};
pub use hypergrad::{check_hypergradient, HypergradConfig};
pub use inner::{check_inner_sgd, InnerConfig};
pub use moments::{check_moment_bounds, MomentConfig};
pub use rates::{check_rates, rate_fixture, rate_run_config, RateFixture, RateMetric, RatePoint, RatesConfig, RatesOutcome};
pub use smoothing_bounds::{check_smoothing_bounds, SmoothingBoundsConfig};
pub use stein::{check_stein, check_stein_suite, SteinFunction};
pub use szhia_check::{check_szhia, SzhiaCheckConfig};

use serde::{Deserialize, Serialize};

/// Number of standard errors a Monte-Carlo estimate may exceed its bound by.
pub const SE_MULTIPLIER: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundBundle {
    pub name: String,
    pub lhs_estimate: f64,
    pub lhs_se: f64,
    pub rhs_bound: f64,
    pub margin: f64,
    pub pass: bool,
}

impl BoundBundle {
    /// One-sided check `lhs ≤ rhs`, passing iff `lhs − 4·se ≤ rhs`.
    pub fn upper(name: impl Into<String>, lhs: f64, se: f64, rhs: f64) -> Self {
        let pass = lhs.is_finite() && rhs.is_finite() && lhs - SE_MULTIPLIER * se <= rhs;
        Self { name: name.into(), lhs_estimate: lhs, lhs_se: se, rhs_bound: rhs, margin: rhs - lhs, pass }
    }

    /// Identity check `E[a] = E[b]` from the mean of paired differences.
    pub fn identity(name: impl Into<String>, diff: f64, se: f64) -> Self {
        Self::upper(name, diff.abs(), se, 0.0)
    }
}

/// Least-squares fit of `log value` against `log scale` (or against the raw
/// scale when `log_scale` is false).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub name: String,
    pub xs: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub log_scale: bool,
    /// Accepted slope interval.
    pub accept: (f64, f64),
    pub min_r_squared: f64,
    pub pass: bool,
}

impl RateFit {
    pub fn log_log(name: impl Into<String>, xs: Vec<(f64, f64)>, accept: (f64, f64), min_r_squared: f64) -> Self {
        Self::fit(name.into(), xs, true, accept, min_r_squared)
    }

    pub fn semi_log(name: impl Into<String>, xs: Vec<(f64, f64)>, accept: (f64, f64), min_r_squared: f64) -> Self {
        Self::fit(name.into(), xs, false, accept, min_r_squared)
    }

    fn fit(name: String, xs: Vec<(f64, f64)>, log_scale: bool, accept: (f64, f64), min_r_squared: f64) -> Self {
        let pts: Vec<(f64, f64)> = xs.iter().map(|&(s, v)| (if log_scale { s.ln() } else { s }, v.ln())).collect();
        let (slope, intercept, r_squared) = least_squares(&pts);
        let pass = slope >= accept.0 && slope <= accept.1 && r_squared >= min_r_squared;
        Self { name, xs, slope, intercept, r_squared, log_scale, accept, min_r_squared, pass }
    }
}

/// `(slope, intercept, r²)`; NaN when fewer than two finite points.
pub fn least_squares(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let pts: Vec<_> = pts.iter().copied().filter(|(a, b)| a.is_finite() && b.is_finite()).collect();
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    (slope, intercept, r2)
}

/// Outcome of one suite.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub suite: String,
    pub bundles: Vec<BoundBundle>,
    pub fits: Vec<RateFit>,
}

impl CheckReport {
    pub fn new(suite: impl Into<String>) -> Self {
        Self { suite: suite.into(), ..Default::default() }
    }

    pub fn passed(&self) -> bool {
        self.bundles.iter().all(|b| b.pass) && self.fits.iter().all(|f| f.pass)
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self.bundles.iter().filter(|b| !b.pass).map(|b| b.name.clone()).collect();
        out.extend(self.fits.iter().filter(|f| !f.pass).map(|f| f.name.clone()));
        out
    }

    pub fn extend(&mut self, other: CheckReport) {
        self.bundles.extend(other.bundles);
        self.fits.extend(other.fits);
    }

    /// `suite: PASS (n bundles, k fits)` or the names of the failures.
    pub fn verdict(&self) -> String {
        if self.passed() {
            format!("{}: PASS ({} bundles, {} fits)", self.suite, self.bundles.len(), self.fits.len())
        } else {
            format!("{}: FAIL [{}]", self.suite, self.failures().join(", "))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bundle_threshold_is_four_se() {
        assert!(BoundBundle::upper("a", 1.4, 0.1, 1.0).pass);
        assert!(!BoundBundle::upper("b", 1.41, 0.1, 1.0).pass);
        let b = BoundBundle::identity("c", -0.3, 0.1);
        assert_eq!(b.lhs_estimate, 0.3);
        assert!(b.pass);
        assert!(!BoundBundle::upper("nan", f64::NAN, 0.0, 1.0).pass);
    }

    #[test]
    fn exact_power_law_is_recovered() {
        let xs: Vec<_> = [100.0, 200.0, 400.0, 800.0].iter().map(|&n: &f64| (n, 3.0 * n.powf(-0.5))).collect();
        let f = RateFit::log_log("p", xs, (-0.6, -0.4), 0.9);
        assert!((f.slope + 0.5).abs() < 1e-12 && (f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12 && f.pass);
    }

    #[test]
    fn semi_log_fits_geometric_decay() {
        let xs: Vec<_> = (0..10).map(|t| (t as f64, 2.0 * 0.9f64.powi(t))).collect();
        let f = RateFit::semi_log("g", xs, (-0.2, 0.0), 0.9);
        assert!((f.slope - 0.9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_fit_is_nan_and_fails() {
        let f = RateFit::log_log("d", vec![(1.0, 1.0)], (-1.0, 1.0), 0.0);
        assert!(f.slope.is_nan() && !f.pass);
    }

    proptest! {
        #[test]
        fn r_squared_in_unit_interval(vals in proptest::collection::vec(0.01f64..100.0, 3..12)) {
            let xs: Vec<_> = vals.iter().enumerate().map(|(i, &v)| ((i + 1) as f64, v)).collect();
            let f = RateFit::log_log("r", xs, (-10.0, 10.0), 0.0);
            prop_assert!((0.0..=1.0).contains(&f.r_squared));
        }
    }
}
