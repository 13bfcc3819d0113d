//! Zeroth-order stochastic bilevel optimization.
//!
//! Gaussian-smoothing derivative estimators for functions of two blocks
//! `(x, y)`, a stochastic Hessian-inverse-product subroutine, the double-loop
//! bilevel solver built on them, and a statistical verification suite that
//! checks estimator identities, bounds and convergence rates on quadratic
//! fixtures with closed-form ground truth.

// Oracle samplers take the full stencil explicitly; `!(a <= b)` is the
// NaN-rejecting comparison.
#![allow(clippy::too_many_arguments, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod linalg;
pub mod output;
pub mod problems;
pub mod rng;
pub mod smoothing;
pub mod stats;
pub mod szhia;
pub mod verify;
pub mod zdsba;

pub use error::{Error, Result};
pub use problems::{BlockPoint, FeasibleSet, NoiseModel, Oracle, ProblemConstants, QuadraticBilevel};
pub use rng::{Phase, Stream};
pub use smoothing::{Estimate, GaussianPair, SmoothingParams};
pub use szhia::{SzhiaConfig, SzhiaResult};
pub use zdsba::{Regime, RunRecord, Schedule, ZdsbaConfig};
