//! Gauss–Hermite quadrature for expectations over a standard normal.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights with `Σ wᵢ h(xᵢ) ≈ E[h(g)]`, `g ~ N(0, 1)`; exact for
/// polynomials of degree `< 2k`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch on the Jacobi matrix of the probabilists' Hermite
    /// polynomials (off-diagonal `√i`).
    pub fn new(k: usize) -> Self {
        assert!(k >= 1, "quadrature needs at least one node");
        let jac = DMatrix::from_fn(k, k, |i, j| if i + 1 == j || j + 1 == i { (i.max(j) as f64).sqrt() } else { 0.0 });
        let eig = SymmetricEigen::new(jac);
        let mut pairs: Vec<(f64, f64)> = (0..k).map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2))).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Self { nodes: pairs.iter().map(|p| p.0).collect(), weights: pairs.iter().map(|p| p.1 / total).collect() }
    }

    /// `E[h(t + s g)]`.
    pub fn expect<F: Fn(f64) -> f64>(&self, t: f64, s: f64, h: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * h(t + s * x)).sum()
    }
}
