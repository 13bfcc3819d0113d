//! Gaussian-smoothing derivative estimators for functions of `(x, y)`.
//!
//! For `q_{η,μ}(x, y) = E q(x + ηu, y + μv)` with independent standard
//! normal `u ∈ ℝⁿ`, `v ∈ ℝᵐ`:
//!
//! ```text
//!   ∇_x q_{η,μ}   ≈ u · [q(x+ηu, y+μv) − q(x, y)] / η
//!   ∇_y q_{η,μ}   ≈ v · [q(x+ηu, y+μv) − q(x, y)] / μ
//!   ∇²_xy q_{η,μ} ≈ u vᵀ · δ² / (2ημ)
//!   ∇²_yy q_{η,μ} ≈ (v vᵀ − I) · δ² / (2μ²)
//!   δ² = q(x+ηu, y+μv) + q(x−ηu, y−μv) − 2 q(x, y)
//! ```
//!
//! All evaluations of one stencil share a single noise draw. A radius of
//! exactly zero leaves its block unperturbed and its direction undrawn.
//! Within a sample, draws happen in the order `u`, `v`, noise.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{BlockPoint, Oracle};
use crate::rng::{fill_normal, stream, Phase, Stream};
use crate::stats::VecMoments;

/// Smoothing radii of the upper (`η₁`, `μ₁`) and lower (`η₂`, `μ₂`) objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams {
    pub eta1: f64,
    pub mu1: f64,
    pub eta2: f64,
    pub mu2: f64,
}

impl SmoothingParams {
    pub fn new(eta1: f64, mu1: f64, eta2: f64, mu2: f64) -> Result<Self> {
        let p = Self { eta1, mu1, eta2, mu2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("eta1", self.eta1), ("mu1", self.mu1), ("eta2", self.eta2), ("mu2", self.mu2)] {
            check_radius(name, r)?;
        }
        Ok(())
    }

    /// Radii tied to the outer budget `N`:
    /// `η₁ = μ₁ = 1/√((N+1)(n+m)³)`, `η₂ = μ₂ = 1/√((N+1)(n+m)⁵)`.
    pub fn for_budget(n: usize, m: usize, outer_iterations: usize) -> Self {
        let d = (n + m) as f64;
        let np1 = outer_iterations as f64 + 1.0;
        let r1 = 1.0 / (np1 * d.powi(3)).sqrt();
        let r2 = 1.0 / (np1 * d.powi(5)).sqrt();
        Self { eta1: r1, mu1: r1, eta2: r2, mu2: r2 }
    }
}

fn check_radius(name: &str, r: f64) -> Result<()> {
    if r.is_finite() && r >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {r}")))
    }
}

fn require_positive(name: &str, r: f64) -> Result<()> {
    check_radius(name, r)?;
    if r == 0.0 {
        return Err(Error::InvalidParameter(format!("{name} must be positive")));
    }
    Ok(())
}

/// Standard-normal directions for the two blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPair {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

impl GaussianPair {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self { u: DVector::zeros(n), v: DVector::zeros(m) }
    }

    /// Redraw the blocks whose radius is positive; the others are zeroed.
    pub fn redraw(&mut self, rng: &mut Stream, draw_u: bool, draw_v: bool) {
        if draw_u {
            fill_normal(rng, &mut self.u);
        } else {
            self.u.fill(0.0);
        }
        if draw_v {
            fill_normal(rng, &mut self.v);
        } else {
            self.v.fill(0.0);
        }
    }
}

/// Estimator output with its oracle cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate<T> {
    pub value: T,
    /// Coordinatewise standard error of the batch mean (infinite for batch 1).
    pub std_error: T,
    pub draws_used: u64,
}

/// Reusable buffers for one stencil.
#[derive(Debug, Clone)]
pub struct Stencil {
    pub dirs: GaussianPair,
    xp: DVector<f64>,
    yp: DVector<f64>,
}

impl Stencil {
    pub fn new(n: usize, m: usize) -> Self {
        Self { dirs: GaussianPair::zeros(n, m), xp: DVector::zeros(n), yp: DVector::zeros(m) }
    }

    fn eval<O: Oracle + ?Sized>(
        &mut self,
        o: &O,
        x: &DVector<f64>,
        y: &DVector<f64>,
        eta: f64,
        mu: f64,
        sign: f64,
        noise: f64,
    ) -> f64 {
        self.xp.copy_from(x);
        self.xp.axpy(sign * eta, &self.dirs.u, 1.0);
        self.yp.copy_from(y);
        self.yp.axpy(sign * mu, &self.dirs.v, 1.0);
        o.value(&self.xp, &self.yp, noise)
    }

    /// Draw `(u, v, ζ)` and return the forward difference
    /// `q(x+ηu, y+μv) − q(x, y)` (2 evaluations).
    pub fn forward<O: Oracle + ?Sized>(
        &mut self,
        o: &O,
        x: &DVector<f64>,
        y: &DVector<f64>,
        eta: f64,
        mu: f64,
        rng: &mut Stream,
    ) -> Result<f64> {
        self.dirs.redraw(rng, eta > 0.0, mu > 0.0);
        let noise = o.draw_noise(rng);
        let d = self.eval(o, x, y, eta, mu, 1.0, noise) - o.value(x, y, noise);
        finite(d)
    }

    /// Draw `(u, v, ζ)` and return the symmetric second difference
    /// `q(x+ηu, y+μv) + q(x−ηu, y−μv) − 2q(x, y)` (3 evaluations).
    pub fn second<O: Oracle + ?Sized>(
        &mut self,
        o: &O,
        x: &DVector<f64>,
        y: &DVector<f64>,
        eta: f64,
        mu: f64,
        rng: &mut Stream,
    ) -> Result<f64> {
        self.dirs.redraw(rng, eta > 0.0, mu > 0.0);
        let noise = o.draw_noise(rng);
        let plus = self.eval(o, x, y, eta, mu, 1.0, noise);
        let minus = self.eval(o, x, y, eta, mu, -1.0, noise);
        finite(plus + minus - 2.0 * o.value(x, y, noise))
    }
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("oracle stencil produced {v}")))
    }
}

// ---- single-sample kernels (algorithm paths) ------------------------------

/// One draw of `u · [q(x+ηu, y+μv) − q(x,y)]/η`, written into `out`.
pub fn grad_x_sample<O: Oracle + ?Sized>(
    o: &O,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eta: f64,
    mu: f64,
    st: &mut Stencil,
    rng: &mut Stream,
    out: &mut DVector<f64>,
) -> Result<()> {
    let d = st.forward(o, x, y, eta, mu, rng)?;
    out.copy_from(&st.dirs.u);
    *out *= d / eta;
    Ok(())
}

/// One draw of `v · [q(x+ηu, y+μv) − q(x,y)]/μ`, written into `out`.
pub fn grad_y_sample<O: Oracle + ?Sized>(
    o: &O,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eta: f64,
    mu: f64,
    st: &mut Stencil,
    rng: &mut Stream,
    out: &mut DVector<f64>,
) -> Result<()> {
    let d = st.forward(o, x, y, eta, mu, rng)?;
    out.copy_from(&st.dirs.v);
    *out *= d / mu;
    Ok(())
}

/// One draw of `u (vᵀz) δ²/(2ημ)`: the cross-Hessian estimate applied to `z ∈ ℝᵐ`.
pub fn hess_xy_action_sample<O: Oracle + ?Sized>(
    o: &O,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eta: f64,
    mu: f64,
    z: &DVector<f64>,
    st: &mut Stencil,
    rng: &mut Stream,
    out: &mut DVector<f64>,
) -> Result<()> {
    let s = st.second(o, x, y, eta, mu, rng)?;
    let scale = st.dirs.v.dot(z) * s / (2.0 * eta * mu);
    out.copy_from(&st.dirs.u);
    *out *= scale;
    Ok(())
}

/// One draw of `(vvᵀ − I) z δ²/(2μ²)`.
pub fn hess_yy_action_sample<O: Oracle + ?Sized>(
    o: &O,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eta: f64,
    mu: f64,
    z: &DVector<f64>,
    st: &mut Stencil,
    rng: &mut Stream,
    out: &mut DVector<f64>,
) -> Result<()> {
    let s = st.second(o, x, y, eta, mu, rng)?;
    let c = s / (2.0 * mu * mu);
    let vz = st.dirs.v.dot(z);
    out.copy_from(&st.dirs.v);
    *out *= vz * c;
    out.axpy(-c, z, 1.0);
    Ok(())
}

// ---- batched estimators ---------------------------------------------------

/// Samples per parallel chunk. Batches up to this size run sequentially on
/// the caller's stream, so `batch = 1` is exactly one single-sample draw.
pub const CHUNK: usize = 8192;

/// Average `batch` vector-valued samples. Large batches fan out over
/// sub-streams keyed by one `u64` drawn from `rng`; chunk results are merged
/// in index order.
pub fn batch_moments<F>(batch: usize, dim: usize, rng: &mut Stream, sample: F) -> Result<VecMoments>
where
    F: Fn(&mut Stream, &mut DVector<f64>) -> Result<()> + Sync,
{
    if batch == 0 {
        return Err(Error::InvalidParameter("batch must be >= 1".into()));
    }
    let run = |count: usize, rng: &mut Stream| -> Result<VecMoments> {
        let mut acc = VecMoments::new(dim);
        let mut buf = DVector::zeros(dim);
        for _ in 0..count {
            sample(rng, &mut buf)?;
            acc.push(&buf);
        }
        Ok(acc)
    };
    if batch <= CHUNK {
        return run(batch, rng);
    }
    let key = rng.next_u64();
    let chunks = batch.div_ceil(CHUNK);
    let parts: Vec<Result<VecMoments>> = (0..chunks)
        .into_par_iter()
        .map(|i| {
            let count = CHUNK.min(batch - i * CHUNK);
            run(count, &mut stream(key, Phase::Estimator, i as u64))
        })
        .collect();
    let mut total = VecMoments::new(dim);
    for p in parts {
        total.merge(&p?);
    }
    Ok(total)
}

fn vector_estimate(acc: VecMoments, per_sample: u64) -> Estimate<DVector<f64>> {
    Estimate { std_error: acc.std_error(), draws_used: acc.count * per_sample, value: acc.mean }
}

/// Batch mean of the `x`-gradient estimator; unbiased for `∇_x q_{η,μ}`.
pub fn est_grad_x<O: Oracle + ?Sized>(
    o: &O,
    point: &BlockPoint,
    eta: f64,
    mu: f64,
    rng: &mut Stream,
    batch: usize,
) -> Result<Estimate<DVector<f64>>> {
    o.check_point(point)?;
    require_positive("eta", eta)?;
    check_radius("mu", mu)?;
    let (n, m) = (point.n(), point.m());
    let acc = batch_moments(batch, n, rng, |r, out| {
        let mut st = Stencil::new(n, m);
        grad_x_sample(o, &point.x, &point.y, eta, mu, &mut st, r, out)
    })?;
    Ok(vector_estimate(acc, 2))
}

/// Batch mean of the `y`-gradient estimator; `eta = 0` leaves `x` fixed.
pub fn est_grad_y<O: Oracle + ?Sized>(
    o: &O,
    point: &BlockPoint,
    eta: f64,
    mu: f64,
    rng: &mut Stream,
    batch: usize,
) -> Result<Estimate<DVector<f64>>> {
    o.check_point(point)?;
    check_radius("eta", eta)?;
    require_positive("mu", mu)?;
    let (n, m) = (point.n(), point.m());
    let acc = batch_moments(batch, m, rng, |r, out| {
        let mut st = Stencil::new(n, m);
        grad_y_sample(o, &point.x, &point.y, eta, mu, &mut st, r, out)
    })?;
    Ok(vector_estimate(acc, 2))
}

/// Batch mean of the materialized cross-Hessian estimator `u vᵀ δ²/(2ημ)` (n×m).
pub fn est_hess_xy<O: Oracle + ?Sized>(
    o: &O,
    point: &BlockPoint,
    eta: f64,
    mu: f64,
    rng: &mut Stream,
    batch: usize,
) -> Result<Estimate<DMatrix<f64>>> {
    o.check_point(point)?;
    require_positive("eta", eta)?;
    require_positive("mu", mu)?;
    let (n, m) = (point.n(), point.m());
    let acc = batch_moments(batch, n * m, rng, |r, out| {
        let mut st = Stencil::new(n, m);
        let s = st.second(o, &point.x, &point.y, eta, mu, r)? / (2.0 * eta * mu);
        let (u, v) = (&st.dirs.u, &st.dirs.v);
        for j in 0..m {
            for i in 0..n {
                out[i + j * n] = u[i] * v[j] * s;
            }
        }
        Ok(())
    })?;
    Ok(Estimate {
        value: DMatrix::from_column_slice(n, m, acc.mean.as_slice()),
        std_error: DMatrix::from_column_slice(n, m, acc.std_error().as_slice()),
        draws_used: acc.count * 3,
    })
}

/// Batch mean of `(vvᵀ − I) z δ²/(2μ₂²)`; unbiased for `∇²_yy q_{η₂,μ₂} z`.
pub fn est_hess_yy_action<O: Oracle + ?Sized>(
    o: &O,
    point: &BlockPoint,
    mu2: f64,
    eta2: f64,
    z: &DVector<f64>,
    rng: &mut Stream,
    batch: usize,
) -> Result<Estimate<DVector<f64>>> {
    o.check_point(point)?;
    crate::error::check_dim("z", point.m(), z.len())?;
    require_positive("mu2", mu2)?;
    check_radius("eta2", eta2)?;
    let (n, m) = (point.n(), point.m());
    let acc = batch_moments(batch, m, rng, |r, out| {
        let mut st = Stencil::new(n, m);
        hess_yy_action_sample(o, &point.x, &point.y, eta2, mu2, z, &mut st, r, out)
    })?;
    Ok(vector_estimate(acc, 3))
}

/// High-batch reference for the full smoothed gradient `(∇_x, ∇_y) q_{η,μ}`,
/// both halves built from the same samples.
pub fn mc_smoothed_gradient<O: Oracle + ?Sized>(
    o: &O,
    point: &BlockPoint,
    eta: f64,
    mu: f64,
    rng: &mut Stream,
    batch: usize,
) -> Result<Estimate<DVector<f64>>> {
    o.check_point(point)?;
    require_positive("eta", eta)?;
    require_positive("mu", mu)?;
    let (n, m) = (point.n(), point.m());
    let acc = batch_moments(batch, n + m, rng, |r, out| {
        let mut st = Stencil::new(n, m);
        let d = st.forward(o, &point.x, &point.y, eta, mu, r)?;
        for i in 0..n {
            out[i] = st.dirs.u[i] * d / eta;
        }
        for j in 0..m {
            out[n + j] = st.dirs.v[j] * d / mu;
        }
        Ok(())
    })?;
    Ok(vector_estimate(acc, 2))
}
