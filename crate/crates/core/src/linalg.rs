//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition number beyond which an SPD solve is refused.
pub const MAX_CONDITION: f64 = 1e12;

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn sym_spectral_norm(m: &DMatrix<f64>) -> f64 {
    let (lo, hi) = eig_range(m);
    lo.abs().max(hi.abs())
}

/// Operator 2-norm of an arbitrary matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Cholesky factor of an SPD matrix, refusing ill-conditioned input.
#[derive(Debug, Clone)]
pub struct SpdSolver {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    pub condition: f64,
}

impl SpdSolver {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let (lo, hi) = eig_range(a);
        if lo <= 0.0 {
            return Err(Error::Singular(f64::INFINITY));
        }
        let condition = hi / lo;
        if condition > MAX_CONDITION {
            return Err(Error::Singular(condition));
        }
        let chol = nalgebra::Cholesky::new(a.clone()).ok_or(Error::Singular(condition))?;
        Ok(Self { chol, condition })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }
}
