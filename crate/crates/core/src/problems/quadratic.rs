//! The quadratic bilevel fixture
//!
//!   g(x, y) = ½ yᵀA y − (Bx + b)ᵀ y
//!   f(x, y) = ½ xᵀP x + ½ yᵀQ y + rᵀx + sᵀy + c
//!
//! with every quantity the solvers approximate available in closed form.

use nalgebra::{DMatrix, DVector};

use super::{FeasibleSet, NoiseModel, Oracle, ProblemConstants};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{eig_range, spectral_norm, sym_spectral_norm, SpdSolver};
use crate::rng::Stream;

/// Which objective of the pair a query refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Upper,
    Lower,
}

/// Raw coefficients; validated by [`QuadraticBilevel::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticParts {
    pub a: DMatrix<f64>,
    pub b_mat: DMatrix<f64>,
    pub b_vec: DVector<f64>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DVector<f64>,
    pub s: DVector<f64>,
    pub c: f64,
    pub noise: NoiseModel,
    pub set: FeasibleSet,
}

impl QuadraticParts {
    /// `A = I`, everything else zero, noiseless, `X = ℝⁿ`.
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            a: DMatrix::identity(m, m),
            b_mat: DMatrix::zeros(m, n),
            b_vec: DVector::zeros(m),
            p: DMatrix::zeros(n, n),
            q: DMatrix::zeros(m, m),
            r: DVector::zeros(n),
            s: DVector::zeros(m),
            c: 0.0,
            noise: NoiseModel::None,
            set: FeasibleSet::Whole,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticBilevel {
    parts: QuadraticParts,
    solver: SpdSolver,
    lambda_g: f64,
    // unit directions of the linear-term noise
    dir_fx: f64,
    dir_fy: f64,
    dir_g: f64,
}

fn check_symmetric(what: &str, m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return Err(Error::Config(format!("{what} must be symmetric")));
    }
    Ok(())
}

fn all_finite<'a>(it: impl IntoIterator<Item = &'a f64>) -> bool {
    it.into_iter().all(|v| v.is_finite())
}

/// `vᵀ M v` without temporaries.
fn quad(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let k = v.len();
    let mut acc = 0.0;
    for j in 0..k {
        let mut col = 0.0;
        for i in 0..k {
            col += m[(i, j)] * v[i];
        }
        acc += col * v[j];
    }
    acc
}

/// `yᵀ B x` without temporaries.
fn bilinear(b: &DMatrix<f64>, y: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..x.len() {
        let mut col = 0.0;
        for i in 0..y.len() {
            col += b[(i, j)] * y[i];
        }
        acc += col * x[j];
    }
    acc
}

impl QuadraticBilevel {
    pub fn new(parts: QuadraticParts) -> Result<Self> {
        let m = parts.a.nrows();
        let n = parts.p.nrows();
        if n == 0 || m == 0 {
            return Err(Error::Config("both blocks need dimension >= 1".into()));
        }
        check_dim("A columns", m, parts.a.ncols())?;
        check_dim("P columns", n, parts.p.ncols())?;
        check_dim("B rows", m, parts.b_mat.nrows())?;
        check_dim("B columns", n, parts.b_mat.ncols())?;
        check_dim("Q rows", m, parts.q.nrows())?;
        check_dim("Q columns", m, parts.q.ncols())?;
        check_dim("b", m, parts.b_vec.len())?;
        check_dim("r", n, parts.r.len())?;
        check_dim("s", m, parts.s.len())?;
        let finite = all_finite(parts.a.iter())
            && all_finite(parts.b_mat.iter())
            && all_finite(parts.b_vec.iter())
            && all_finite(parts.p.iter())
            && all_finite(parts.q.iter())
            && all_finite(parts.r.iter())
            && all_finite(parts.s.iter())
            && parts.c.is_finite();
        if !finite {
            return Err(Error::Config("problem coefficients must be finite".into()));
        }
        check_symmetric("A", &parts.a)?;
        check_symmetric("P", &parts.p)?;
        check_symmetric("Q", &parts.q)?;
        parts.noise.validate()?;
        parts.set.validate(n)?;
        let solver = SpdSolver::new(&parts.a)?;
        let (lambda_g, _) = eig_range(&parts.a);
        Ok(Self {
            dir_fx: 1.0 / ((n + m) as f64).sqrt(),
            dir_fy: 1.0 / ((n + m) as f64).sqrt(),
            dir_g: 1.0 / (m as f64).sqrt(),
            parts,
            solver,
            lambda_g,
        })
    }

    pub fn parts(&self) -> &QuadraticParts {
        &self.parts
    }

    pub fn n(&self) -> usize {
        self.parts.p.nrows()
    }

    pub fn m(&self) -> usize {
        self.parts.a.nrows()
    }

    pub fn noise(&self) -> NoiseModel {
        self.parts.noise
    }

    pub fn set(&self) -> &FeasibleSet {
        &self.parts.set
    }

    /// Copy with a different noise model.
    pub fn with_noise(&self, noise: NoiseModel) -> Result<Self> {
        let mut parts = self.parts.clone();
        parts.noise = noise;
        Self::new(parts)
    }

    /// Copy with a different outer feasible set.
    pub fn with_set(&self, set: FeasibleSet) -> Result<Self> {
        let mut parts = self.parts.clone();
        parts.set = set;
        Self::new(parts)
    }

    /// `λ_min(A)`.
    pub fn lambda_g(&self) -> f64 {
        self.lambda_g
    }

    pub fn condition(&self) -> f64 {
        self.solver.condition
    }

    pub fn upper_value(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let p = &self.parts;
        0.5 * quad(&p.p, x) + 0.5 * quad(&p.q, y) + p.r.dot(x) + p.s.dot(y) + p.c
    }

    pub fn lower_value(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let p = &self.parts;
        0.5 * quad(&p.a, y) - bilinear(&p.b_mat, y, x) - p.b_vec.dot(y)
    }

    pub fn value(&self, level: Level, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        match level {
            Level::Upper => self.upper_value(x, y),
            Level::Lower => self.lower_value(x, y),
        }
    }

    /// `F(x, y, ξ)` for a given standard-normal realization.
    pub fn upper_stochastic(&self, x: &DVector<f64>, y: &DVector<f64>, xi: f64) -> f64 {
        let f = self.upper_value(x, y);
        match self.parts.noise {
            NoiseModel::None => f,
            NoiseModel::AdditiveValue { sigma } => f + sigma * xi,
            NoiseModel::LinearTerm { sigma } => f + sigma * xi * (self.dir_fx * x.sum() + self.dir_fy * y.sum()),
        }
    }

    /// `G(x, y, ζ)` for a given standard-normal realization.
    pub fn lower_stochastic(&self, x: &DVector<f64>, y: &DVector<f64>, zeta: f64) -> f64 {
        let g = self.lower_value(x, y);
        match self.parts.noise {
            NoiseModel::None => g,
            NoiseModel::AdditiveValue { sigma } => g + sigma * zeta,
            NoiseModel::LinearTerm { sigma } => g - sigma * zeta * self.dir_g * y.sum(),
        }
    }

    /// `(∇_x f, ∇_y f)`.
    pub fn upper_gradient(&self, x: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let p = &self.parts;
        (&p.p * x + &p.r, &p.q * y + &p.s)
    }

    /// `(∇_x g, ∇_y g)`.
    pub fn lower_gradient(&self, x: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let p = &self.parts;
        (-p.b_mat.transpose() * y, &p.a * y - (&p.b_mat * x + &p.b_vec))
    }

    /// `(∇_x F, ∇_y F)` at one noise realization.
    pub fn upper_stochastic_gradient(&self, x: &DVector<f64>, y: &DVector<f64>, xi: f64) -> (DVector<f64>, DVector<f64>) {
        let (mut gx, mut gy) = self.upper_gradient(x, y);
        if let NoiseModel::LinearTerm { sigma } = self.parts.noise {
            gx.add_scalar_mut(sigma * xi * self.dir_fx);
            gy.add_scalar_mut(sigma * xi * self.dir_fy);
        }
        (gx, gy)
    }

    /// `(∇_x G, ∇_y G)` at one noise realization.
    pub fn lower_stochastic_gradient(&self, x: &DVector<f64>, y: &DVector<f64>, zeta: f64) -> (DVector<f64>, DVector<f64>) {
        let (gx, mut gy) = self.lower_gradient(x, y);
        if let NoiseModel::LinearTerm { sigma } = self.parts.noise {
            gy.add_scalar_mut(-sigma * zeta * self.dir_g);
        }
        (gx, gy)
    }

    /// Traces of the diagonal Hessian blocks `(tr ∇²_xx, tr ∇²_yy)`.
    pub fn hessian_traces(&self, level: Level) -> (f64, f64) {
        match level {
            Level::Upper => (self.parts.p.trace(), self.parts.q.trace()),
            Level::Lower => (0.0, self.parts.a.trace()),
        }
    }

    /// Hessian blocks `(∇²_xx, ∇²_xy, ∇²_yy)`; `∇²_xy` is n×m.
    pub fn hessian_blocks(&self, level: Level) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (n, m) = (self.n(), self.m());
        match level {
            Level::Upper => (self.parts.p.clone(), DMatrix::zeros(n, m), self.parts.q.clone()),
            Level::Lower => (DMatrix::zeros(n, n), -self.parts.b_mat.transpose(), self.parts.a.clone()),
        }
    }

    /// Exact Gaussian smoothing of a quadratic:
    /// `q + (η²/2) tr ∇²_xx q + (μ²/2) tr ∇²_yy q`.
    pub fn smoothed_value(&self, level: Level, x: &DVector<f64>, y: &DVector<f64>, eta: f64, mu: f64) -> f64 {
        let (txx, tyy) = self.hessian_traces(level);
        self.value(level, x, y) + 0.5 * eta * eta * txx + 0.5 * mu * mu * tyy
    }

    /// `y*(x) = A⁻¹(Bx + b)`.
    pub fn lower_solution(&self, x: &DVector<f64>) -> DVector<f64> {
        self.solver.solve(&(&self.parts.b_mat * x + &self.parts.b_vec))
    }

    /// `ψ(x) = f(x, y*(x))`.
    pub fn psi(&self, x: &DVector<f64>) -> f64 {
        self.upper_value(x, &self.lower_solution(x))
    }

    /// `∇̄(f,g)(x, y) = ∇_x f − ∇²_xy g [∇²_yy g]⁻¹ ∇_y f`, evaluated at an arbitrary `y`.
    pub fn bar_hypergradient(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let p = &self.parts;
        let (gx, gy) = self.upper_gradient(x, y);
        gx + p.b_mat.transpose() * self.solver.solve(&gy)
    }

    /// `∇ψ(x)`.
    pub fn hypergradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.bar_hypergradient(x, &self.lower_solution(x))
    }

    /// The SZHIA target `[∇²_yy g]⁻¹ ∇_y f` at `(x, y)`. Smoothing leaves both
    /// factors of a quadratic unchanged.
    pub fn hessian_inverse_product(&self, y: &DVector<f64>) -> DVector<f64> {
        self.solver.solve(&(&self.parts.q * y + &self.parts.s))
    }

    pub fn solve_lower_hessian(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.solver.solve(rhs)
    }

    pub fn solve_lower_hessian_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.solver.solve_matrix(rhs)
    }

    /// `∇²ψ = P + BᵀA⁻¹QA⁻¹B`, constant in `x`.
    pub fn psi_hessian(&self) -> DMatrix<f64> {
        let p = &self.parts;
        let ainv_b = self.solver.solve_matrix(&p.b_mat);
        &p.p + ainv_b.transpose() * &p.q * &ainv_b
    }

    /// `(λ_ψ, L_{1,ψ})`: extreme eigenvalues of `∇²ψ`.
    pub fn psi_curvature(&self) -> (f64, f64) {
        eig_range(&self.psi_hessian())
    }

    /// Constants of Assumptions on a ball of radius `region_radius` around
    /// the origin of `(x, y)`-space (the gradient of a quadratic is only
    /// Lipschitz-bounded on bounded regions).
    pub fn constants(&self, region_radius: f64) -> ProblemConstants {
        let p = &self.parts;
        let (n, m) = (self.n(), self.m());
        let l1_f = sym_spectral_norm(&p.p).max(sym_spectral_norm(&p.q));
        let lin = (p.r.norm_squared() + p.s.norm_squared()).sqrt();
        let mut hg = DMatrix::zeros(n + m, n + m);
        hg.view_mut((n, 0), (m, n)).copy_from(&(-&p.b_mat));
        hg.view_mut((0, n), (n, m)).copy_from(&(-p.b_mat.transpose()));
        hg.view_mut((n, n), (m, m)).copy_from(&p.a);
        let l1_g = spectral_norm(&hg);
        let sigma = self.parts.noise.gradient_sigma();
        ProblemConstants {
            lambda_g: self.lambda_g,
            l0_f: l1_f * region_radius + lin,
            l1_f,
            l1_g,
            l2_g: 0.0,
            l1_big_g: l1_g,
            l2_big_g: 0.0,
            sigma1_f: sigma,
            sigma1_g: sigma,
            sigma2_g: 0.0,
        }
    }

    /// Minimizer of `ψ` over `X`: a direct solve on `ℝⁿ`, projected gradient
    /// descent on the exact `ψ` otherwise.
    pub fn upper_minimizer(&self) -> Result<DVector<f64>> {
        let h = self.psi_hessian();
        let (lo, hi) = eig_range(&h);
        let n = self.n();
        let g0 = self.hypergradient(&DVector::zeros(n));
        if !self.parts.set.is_bounded() {
            if lo <= 1e-12 * hi.max(1.0) {
                return Err(Error::Numeric("ψ has no unique minimizer on ℝⁿ".into()));
            }
            let solver = SpdSolver::new(&h)?;
            return Ok(-solver.solve(&g0));
        }
        if lo < -1e-12 * hi.abs().max(1.0) {
            return Err(Error::Numeric("ψ is not convex; no reference minimizer".into()));
        }
        let step = 1.0 / hi.max(1e-3);
        let mut x = self.parts.set.project(&DVector::zeros(n));
        for _ in 0..1_000_000 {
            let grad = &h * &x + &g0;
            let next = self.parts.set.project(&(&x - grad * step));
            let moved = (&next - &x).norm();
            x = next;
            if moved <= 1e-14 * (1.0 + x.norm()) {
                return Ok(x);
            }
        }
        Err(Error::Numeric("reference projected-gradient solve did not converge".into()))
    }
}

/// Zeroth-order view of the upper objective `F`.
#[derive(Clone, Copy)]
pub struct UpperOracle<'a>(pub &'a QuadraticBilevel);

/// Zeroth-order view of the lower objective `G`.
#[derive(Clone, Copy)]
pub struct LowerOracle<'a>(pub &'a QuadraticBilevel);

impl QuadraticBilevel {
    pub fn upper(&self) -> UpperOracle<'_> {
        UpperOracle(self)
    }

    pub fn lower(&self) -> LowerOracle<'_> {
        LowerOracle(self)
    }
}

impl Oracle for UpperOracle<'_> {
    fn dim_x(&self) -> usize {
        self.0.n()
    }
    fn dim_y(&self) -> usize {
        self.0.m()
    }
    fn draw_noise(&self, rng: &mut Stream) -> f64 {
        self.0.parts.noise.draw(rng)
    }
    fn value(&self, x: &DVector<f64>, y: &DVector<f64>, noise: f64) -> f64 {
        self.0.upper_stochastic(x, y, noise)
    }
}

impl Oracle for LowerOracle<'_> {
    fn dim_x(&self) -> usize {
        self.0.n()
    }
    fn dim_y(&self) -> usize {
        self.0.m()
    }
    fn draw_noise(&self, rng: &mut Stream) -> f64 {
        self.0.parts.noise.draw(rng)
    }
    fn value(&self, x: &DVector<f64>, y: &DVector<f64>, noise: f64) -> f64 {
        self.0.lower_stochastic(x, y, noise)
    }
}
