//! Geometry of the linear model `y ~ N(X beta, sigma^2 I)` for the group
//! hypothesis that the first `k` coefficients vanish.
//!
//! [`ModelContext`] caches everything that depends on the design alone: an
//! orthonormal basis of the nuisance column space (used to apply
//! `P_{-1:k}` without forming an `n x n` projector), the complement basis
//! `V`, the Gram matrix and the `k x k` blocks derived from them.
//! [`SufficientState`] is the per-response conditioning bundle and
//! [`sample_conditional`] draws exchangeable copies of the response.

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Smallest admissible ratio of the extreme singular values of `X`.
pub const RANK_TOLERANCE: f64 = 1e-8;

/// Design matrix whose first `k` columns form the tested group.
#[derive(Debug, Clone)]
pub struct Design {
    x: DMatrix<f64>,
    k: usize,
}

impl Design {
    pub fn new(x: DMatrix<f64>, k: usize) -> Result<Self> {
        let (n, d) = x.shape();
        if k == 0 || k > d {
            return Err(Error::BadGroupSize { k, d });
        }
        if n <= d {
            return Err(Error::TooFewRows { n, d });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("design contains non-finite entries".into()));
        }
        Ok(Self { x, k })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn d(&self) -> usize {
        self.x.ncols()
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    /// `X_{1:k}`.
    pub fn tested(&self) -> DMatrixView<'_, f64> {
        self.x.columns(0, self.k)
    }
    /// `X_{-1:k}`.
    pub fn nuisance(&self) -> DMatrixView<'_, f64> {
        self.x.columns(self.k, self.d() - self.k)
    }
    pub fn into_inner(self) -> DMatrix<f64> {
        self.x
    }
}

/// Orthonormal basis `V` of `col(X_{-1:k})^perp`, `n x (n - d + k)`.
///
/// Column `i < k` is the normalized residual of `X_i` on the columns after
/// it; the remaining columns span `col(X)^perp`.
#[derive(Debug, Clone)]
pub struct ComplementBasis {
    v: DMatrix<f64>,
    k: usize,
}

impl ComplementBasis {
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }
    /// `V_{1:k}`.
    pub fn head(&self) -> DMatrixView<'_, f64> {
        self.v.columns(0, self.k)
    }
    /// Dimension `n - d + k` of the sphere the unit vector `u` lives on.
    pub fn dim(&self) -> usize {
        self.v.ncols()
    }
}

/// `S = X_{1:k}^T V_{1:k} V_{1:k}^T X_{1:k}`, equal to `X_{1:k}^T (I - P_{-1:k}) X_{1:k}`.
#[derive(Debug, Clone)]
pub struct SchurBlock {
    s: DMatrix<f64>,
}

impl SchurBlock {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.s
    }
    /// `S^{-1} v` by Cholesky.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.s
            .clone()
            .cholesky()
            .expect("Schur block is positive definite for full-rank designs")
            .solve(v)
    }
}

/// Immutable cache of design-dependent quantities.
#[derive(Debug, Clone)]
pub struct ModelContext {
    design: Design,
    basis: ComplementBasis,
    // Columns ordered d-1, d-2, ..., 0: the leading j columns are an
    // orthonormal basis of the span of the last j design columns.
    reversed_q: DMatrix<f64>,
    gram: DMatrix<f64>,
    x1t_v1: DMatrix<f64>,
    x1t_v1_inv: DMatrix<f64>,
    schur: SchurBlock,
    lipschitz: f64,
    singular_ratio: f64,
}

/// Builds the model context for testing the first `k` columns of `x`.
pub fn build_model(x: DMatrix<f64>, k: usize) -> Result<ModelContext> {
    ModelContext::new(Design::new(x, k)?)
}

impl ModelContext {
    pub fn new(design: Design) -> Result<Self> {
        let (n, d, k) = (design.n(), design.d(), design.k());
        let sv = design.x.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let singular_ratio = if smax > 0.0 { smin / smax } else { 0.0 };
        if !(singular_ratio >= RANK_TOLERANCE) {
            return Err(Error::RankDeficient { ratio: singular_ratio });
        }

        // Householder QR of [X reversed | I_n]: the first d columns of Q are
        // the Gram-Schmidt residual directions, the rest complete R^n.
        let mut aug = DMatrix::<f64>::zeros(n, d + n);
        for j in 0..d {
            aug.set_column(j, &design.x.column(d - 1 - j));
        }
        for i in 0..n {
            aug[(i, d + i)] = 1.0;
        }
        let qr = aug.qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..d {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        let reversed_q = q.columns(0, d).into_owned();

        let dim = n - d + k;
        let mut v = DMatrix::<f64>::zeros(n, dim);
        for i in 0..k {
            v.set_column(i, &q.column(d - 1 - i));
        }
        for j in 0..(n - d) {
            v.set_column(k + j, &q.column(d + j));
        }

        let gram = design.x.transpose() * &design.x;
        let x1t_v1 = design.tested().transpose() * v.columns(0, k);
        let x1t_v1_inv = x1t_v1
            .clone()
            .try_inverse()
            .ok_or(Error::RankDeficient { ratio: 0.0 })?;
        let schur = SchurBlock {
            s: &x1t_v1 * x1t_v1.transpose(),
        };
        let lipschitz = gram.symmetric_eigenvalues().max() / n as f64;

        Ok(Self {
            design,
            basis: ComplementBasis { v, k },
            reversed_q,
            gram,
            x1t_v1,
            x1t_v1_inv,
            schur,
            lipschitz,
            singular_ratio,
        })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.design.x
    }
    pub fn n(&self) -> usize {
        self.design.n()
    }
    pub fn d(&self) -> usize {
        self.design.d()
    }
    pub fn k(&self) -> usize {
        self.design.k()
    }
    /// Residual degrees of freedom `n - d`.
    pub fn resid_df(&self) -> usize {
        self.n() - self.d()
    }
    pub fn basis(&self) -> &ComplementBasis {
        &self.basis
    }
    /// `X^T X`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }
    /// `X_{1:k}^T V_{1:k}` (upper triangular with positive diagonal).
    pub fn x1t_v1(&self) -> &DMatrix<f64> {
        &self.x1t_v1
    }
    /// `(X_{1:k}^T V_{1:k})^{-1}`.
    pub fn x1t_v1_inv(&self) -> &DMatrix<f64> {
        &self.x1t_v1_inv
    }
    pub fn schur(&self) -> &SchurBlock {
        &self.schur
    }
    /// Largest eigenvalue of `X^T X / n`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
    /// Smallest over largest singular value of `X`.
    pub fn singular_ratio(&self) -> f64 {
        self.singular_ratio
    }

    /// Orthonormal basis of `col(X_{-1:i})` (columns `i..d`, 0-based `i`).
    pub fn trailing_basis(&self, i: usize) -> DMatrixView<'_, f64> {
        assert!(i <= self.d());
        self.reversed_q.columns(0, self.d() - i)
    }

    /// Orthonormal basis of `col(X)`.
    pub fn full_basis(&self) -> DMatrixView<'_, f64> {
        self.trailing_basis(0)
    }

    /// `P_{-1:i} y`: projection onto the span of design columns `i..d`.
    pub fn project_trailing(&self, i: usize, y: &DVector<f64>) -> DVector<f64> {
        let q = self.trailing_basis(i);
        &q * (q.transpose() * y)
    }

    /// `P_{-1:k} y`.
    pub fn project_nuisance(&self, y: &DVector<f64>) -> DVector<f64> {
        self.project_trailing(self.k(), y)
    }

    /// `P y`, the projection onto the full column space.
    pub fn project_full(&self, y: &DVector<f64>) -> DVector<f64> {
        self.project_trailing(0, y)
    }

    /// `X_{-1:k}^T v`.
    pub fn nuisance_t_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        self.design.nuisance().transpose() * v
    }

    /// `X_{1:k}^T v`.
    pub fn tested_t_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        self.design.tested().transpose() * v
    }

    /// `X^T v`.
    pub fn xt_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        self.design.x.transpose() * v
    }
}

/// Conditioning bundle for `H_{1:k}` computed from one response vector.
#[derive(Debug, Clone)]
pub struct SufficientState {
    /// `P_{-1:k} y`.
    pub yhat: DVector<f64>,
    /// `||(I - P_{-1:k}) y||`.
    pub sigma_hat: f64,
    /// Unit vector with `y = yhat + sigma_hat * V u`.
    pub u: DVector<f64>,
    /// `X_{-1:k}^T y`.
    pub xty: DVector<f64>,
    /// `y^T y`.
    pub yty: f64,
}

impl SufficientState {
    /// `u_{1:k}`.
    pub fn u_head(&self, k: usize) -> DVector<f64> {
        self.u.rows(0, k).into_owned()
    }

    /// `yhat + sigma_hat * V w` for a unit vector `w`.
    pub fn reconstruct(&self, ctx: &ModelContext, w: &DVector<f64>) -> DVector<f64> {
        &self.yhat + ctx.basis().v() * w * self.sigma_hat
    }
}

/// Decomposes `y` into its sufficient statistic and the unit vector `u`.
pub fn sufficient_state(ctx: &ModelContext, y: &DVector<f64>) -> Result<SufficientState> {
    if y.len() != ctx.n() {
        return Err(Error::Dimension(format!(
            "response has length {} but design has {} rows",
            y.len(),
            ctx.n()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("response contains non-finite entries".into()));
    }
    let yhat = ctx.project_nuisance(y);
    let resid = y - &yhat;
    let sigma_hat = resid.norm();
    let scale = y.norm().max(f64::MIN_POSITIVE);
    if sigma_hat <= 1e-13 * scale {
        return Err(Error::DegenerateResidual);
    }
    let mut u = ctx.basis().v().transpose() * &resid;
    u /= sigma_hat;
    // V^T resid has norm sigma_hat exactly in exact arithmetic.
    let norm = u.norm();
    u /= norm;
    Ok(SufficientState {
        yhat,
        sigma_hat,
        u,
        xty: ctx.nuisance_t_mul(y),
        yty: y.dot(y),
    })
}

/// Draws a point uniformly on the unit sphere in `R^dim`.
pub fn sample_sphere<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    assert!(dim > 0, "sphere dimension must be positive");
    loop {
        let z = DVector::<f64>::from_fn(dim, |_, _| rng.sample(StandardNormal));
        let norm = z.norm();
        if norm > 0.0 {
            return z / norm;
        }
    }
}

/// First `k` coordinates of a uniform draw on the unit sphere in `R^dim`,
/// without materialising the full vector.
pub fn sample_sphere_head<R: Rng + ?Sized>(dim: usize, k: usize, rng: &mut R) -> DVector<f64> {
    assert!(k <= dim && dim > 0);
    loop {
        let mut head = DVector::<f64>::zeros(k);
        let mut ss = 0.0;
        for i in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            ss += z * z;
            if i < k {
                head[i] = z;
            }
        }
        if ss > 0.0 {
            return head / ss.sqrt();
        }
    }
}

/// Draws `u~ ~ Unif(S^{n-d+k-1})` and the response `y~ = yhat + sigma_hat V u~`,
/// which shares `X_{-1:k}^T y` and `y^T y` with the observed response.
pub fn sample_conditional<R: Rng + ?Sized>(
    ctx: &ModelContext,
    state: &SufficientState,
    rng: &mut R,
) -> (DVector<f64>, DVector<f64>) {
    let u = sample_sphere(ctx.basis().dim(), rng);
    let y = state.reconstruct(ctx, &u);
    (u, y)
}
