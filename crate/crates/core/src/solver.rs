//! Penalized least squares solvers.
//!
//! Both the group LASSO
//! `(1/2n)||y - X beta||^2 + lambda (||beta_{1:k}||_2 + ||beta_{-1:k}||_1)`
//! and the conditional LASSO on the nuisance block are instances of one
//! problem: a quadratic loss in Gram form plus a penalty made of one
//! Euclidean-norm group (possibly empty) followed by `l1` coordinates. The
//! problem is solved by monotone FISTA with function-value restart and
//! backtracking, and the final iterate is polished by Newton's method on
//! the identified support, which drives the KKT residual to rounding level
//! whenever the support is right.

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{sample_conditional, ModelContext, SufficientState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Target KKT residual (gradient units of the `1/2n`-scaled loss).
    pub kkt_tol: f64,
    /// Relative objective change that triggers a polishing attempt.
    pub rel_obj_tol: f64,
    pub max_iter: usize,
    pub polish: bool,
    /// Keep the objective value of every accepted iterate.
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-11,
            rel_obj_tol: 1e-10,
            max_iter: 50_000,
            polish: true,
            record_trace: false,
        }
    }
}

impl SolverOptions {
    /// Looser settings for cross-validation paths.
    pub fn path() -> Self {
        Self {
            kkt_tol: 1e-7,
            ..Self::default()
        }
    }
}

/// Result of a group LASSO fit.
#[derive(Debug, Clone, Serialize)]
pub struct GroupLassoFit {
    pub beta: Vec<f64>,
    pub lambda: f64,
    /// Indices `j >= k` with `beta_j != 0`.
    pub active_set: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    #[serde(skip)]
    pub trace: Vec<f64>,
}

impl GroupLassoFit {
    pub fn beta(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }

    /// `beta_{1:k}`.
    pub fn head(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.beta[..k])
    }

    pub fn ensure_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                kkt: self.kkt_residual,
            })
        }
    }
}

/// Result of the conditional LASSO `beta^lambda_{-1:k}(b)`.
#[derive(Debug, Clone)]
pub struct ConditionalFit {
    /// Nuisance coefficients, length `d - k`.
    pub beta: DVector<f64>,
    /// Indices into the full design (`k..d`) of nonzero coefficients.
    pub active_set: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
}

/// Quadratic `0.5 x^T H x - c^T x + zz_half` with `H = scale * G`.
struct Quadratic<'a> {
    g: DMatrixView<'a, f64>,
    scale: f64,
    c: DVector<f64>,
    zz_half: f64,
}

impl Quadratic<'_> {
    fn hmul(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        out.gemv(self.scale, &self.g, x, 0.0);
        out
    }

    fn smooth(&self, x: &DVector<f64>, hx: &DVector<f64>) -> f64 {
        0.5 * x.dot(hx) - self.c.dot(x) + self.zz_half
    }
}

struct Penalty {
    group: usize,
    lambda: f64,
}

impl Penalty {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let g = x.rows(0, self.group).norm();
        let l1: f64 = x.iter().skip(self.group).map(|v| v.abs()).sum();
        self.lambda * (g + l1)
    }

    fn prox_in_place(&self, v: &mut DVector<f64>, step: f64) {
        let t = step * self.lambda;
        if self.group > 0 {
            let norm = v.rows(0, self.group).norm();
            let shrink = if norm > t { 1.0 - t / norm } else { 0.0 };
            v.rows_mut(0, self.group).scale_mut(shrink);
        }
        for j in self.group..v.len() {
            let a = v[j];
            v[j] = if a > t {
                a - t
            } else if a < -t {
                a + t
            } else {
                0.0
            };
        }
    }

    /// Max violation of the subgradient optimality conditions given the
    /// smooth gradient `grad` at `x`.
    fn kkt(&self, x: &DVector<f64>, grad: &DVector<f64>) -> f64 {
        let lam = self.lambda;
        let mut worst = 0.0f64;
        if self.group > 0 {
            let xg = x.rows(0, self.group);
            let gg = grad.rows(0, self.group);
            let norm = xg.norm();
            let r = if norm > 0.0 {
                (gg + xg * (lam / norm)).norm()
            } else {
                (gg.norm() - lam).max(0.0)
            };
            worst = worst.max(r);
        }
        for j in self.group..x.len() {
            let r = if x[j] != 0.0 {
                (grad[j] + lam * x[j].signum()).abs()
            } else {
                (grad[j].abs() - lam).max(0.0)
            };
            worst = worst.max(r);
        }
        worst
    }
}

struct RawFit {
    x: DVector<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
    kkt: f64,
    trace: Vec<f64>,
}

fn solve(
    q: &Quadratic<'_>,
    pen: &Penalty,
    lipschitz: f64,
    warm: Option<&DVector<f64>>,
    opts: &SolverOptions,
) -> RawFit {
    let p = q.c.len();
    let objective = |x: &DVector<f64>, hx: &DVector<f64>| q.smooth(x, hx) + pen.value(x);

    let mut x = match warm {
        Some(w) => w.clone(),
        None => DVector::zeros(p),
    };
    if p == 0 {
        return RawFit {
            x,
            objective: q.zz_half,
            iterations: 0,
            converged: true,
            kkt: 0.0,
            trace: Vec::new(),
        };
    }
    let mut hx = q.hmul(&x);
    let mut fx = objective(&x, &hx);
    let mut kkt = pen.kkt(&x, &(&hx - &q.c));
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.push(fx);
    }
    let mut lip = lipschitz.max(f64::MIN_POSITIVE) * (1.0 + 1e-12);

    let mut y = x.clone();
    let mut hy = hx.clone();
    let mut t = 1.0f64;
    let mut iterations = 0;
    let mut polish_failed_at = 0usize;

    while kkt > opts.kkt_tol && iterations < opts.max_iter {
        iterations += 1;
        let grad_y = &hy - &q.c;

        // Backtracking on the quadratic upper bound of the smooth part.
        let (z, hz) = loop {
            let mut z = &y - &grad_y / lip;
            pen.prox_in_place(&mut z, 1.0 / lip);
            let hz = q.hmul(&z);
            let dz = &z - &y;
            let dhd = dz.dot(&(&hz - &hy));
            if dhd <= lip * dz.norm_squared() * (1.0 + 1e-10) + 1e-300 {
                break (z, hz);
            }
            lip *= 2.0;
        };
        let fz = objective(&z, &hz);

        let mut stalled = false;
        if fz <= fx {
            let rel_change = (fx - fz) / fx.abs().max(1.0);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let momentum = (t - 1.0) / t_next;
            y = &z + (&z - &x) * momentum;
            hy = &hz + (&hz - &hx) * momentum;
            x = z;
            hx = hz;
            fx = fz;
            t = t_next;
            kkt = pen.kkt(&x, &(&hx - &q.c));
            if opts.record_trace {
                trace.push(fx);
            }
            stalled = rel_change <= opts.rel_obj_tol;
        } else {
            // Momentum overshot: restart from the current iterate.
            if t == 1.0 {
                // A plain proximal-gradient step failed to descend, so we are
                // at the rounding floor.
                stalled = true;
            }
            t = 1.0;
            y = x.clone();
            hy = hx.clone();
        }

        let want_polish = opts.polish
            && kkt > opts.kkt_tol
            && (stalled || kkt <= 1e-5 || iterations % 200 == 0)
            && iterations >= polish_failed_at + 25;
        if want_polish {
            match polish(q, pen, &x, kkt) {
                Some((xp, hxp, kp)) => {
                    let fp = objective(&xp, &hxp);
                    x = xp;
                    hx = hxp;
                    kkt = kp;
                    fx = fx.min(fp);
                    if opts.record_trace {
                        trace.push(fx);
                    }
                    t = 1.0;
                    y = x.clone();
                    hy = hx.clone();
                }
                None => polish_failed_at = iterations,
            }
        }
        if stalled && kkt > opts.kkt_tol && !opts.polish {
            break;
        }
        if stalled && t == 1.0 && fz > fx && kkt > opts.kkt_tol && iterations > polish_failed_at + 50 {
            break;
        }
    }

    RawFit {
        objective: objective(&x, &hx),
        converged: kkt <= opts.kkt_tol.max(1e-7),
        x,
        iterations,
        kkt,
        trace,
    }
}

/// Newton's method on the support of `x` with signs held fixed. Returns the
/// polished point only if it keeps the support and lowers the KKT residual.
fn polish(
    q: &Quadratic<'_>,
    pen: &Penalty,
    x: &DVector<f64>,
    kkt_now: f64,
) -> Option<(DVector<f64>, DVector<f64>, f64)> {
    let p = x.len();
    let lam = pen.lambda;
    let group_active = pen.group > 0 && x.rows(0, pen.group).norm() > 0.0;
    let mut support: Vec<usize> = Vec::new();
    if group_active {
        support.extend(0..pen.group);
    }
    let rest: Vec<usize> = (pen.group..p).filter(|&j| x[j] != 0.0).collect();
    support.extend(rest.iter().copied());
    let g_len = if group_active { pen.group } else { 0 };
    let m = support.len();
    let signs: Vec<f64> = rest.iter().map(|&j| x[j].signum()).collect();

    let mut h_ss = DMatrix::<f64>::zeros(m, m);
    for (a, &i) in support.iter().enumerate() {
        for (b, &j) in support.iter().enumerate() {
            h_ss[(a, b)] = q.scale * q.g[(i, j)];
        }
    }
    let c_s = DVector::from_iterator(m, support.iter().map(|&i| q.c[i]));
    let mut beta = DVector::from_iterator(m, support.iter().map(|&i| x[i]));

    if m > 0 {
        if g_len == 0 {
            let mut rhs = c_s.clone();
            for (a, s) in signs.iter().enumerate() {
                rhs[a] -= lam * s;
            }
            beta = h_ss.clone().cholesky()?.solve(&rhs);
        } else {
            let restricted_obj = |b: &DVector<f64>| -> f64 {
                let hb = &h_ss * b;
                let mut v = 0.5 * b.dot(&hb) - c_s.dot(b) + lam * b.rows(0, g_len).norm();
                for (a, s) in signs.iter().enumerate() {
                    v += lam * s * b[g_len + a];
                }
                v
            };
            for _ in 0..60 {
                let bg = beta.rows(0, g_len).into_owned();
                let gn = bg.norm();
                if gn <= 0.0 {
                    return None;
                }
                let mut grad = &h_ss * &beta - &c_s;
                for i in 0..g_len {
                    grad[i] += lam * bg[i] / gn;
                }
                for (a, s) in signs.iter().enumerate() {
                    grad[g_len + a] += lam * s;
                }
                if grad.amax() <= 1e-15 * (1.0 + c_s.amax()) {
                    break;
                }
                let mut hess = h_ss.clone();
                let unit = &bg / gn;
                for i in 0..g_len {
                    for j in 0..g_len {
                        let eye = if i == j { 1.0 } else { 0.0 };
                        hess[(i, j)] += lam * (eye - unit[i] * unit[j]) / gn;
                    }
                }
                let step = hess.cholesky()?.solve(&grad);
                let f0 = restricted_obj(&beta);
                let mut alpha = 1.0;
                let mut accepted = false;
                for _ in 0..40 {
                    let cand = &beta - &step * alpha;
                    let signs_ok = signs
                        .iter()
                        .enumerate()
                        .all(|(a, s)| cand[g_len + a] * s > 0.0);
                    if signs_ok
                        && cand.rows(0, g_len).norm() > 0.0
                        && restricted_obj(&cand) <= f0 + 1e-15 * f0.abs().max(1.0)
                    {
                        beta = cand;
                        accepted = true;
                        break;
                    }
                    alpha *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
        }
    }

    for (a, s) in signs.iter().enumerate() {
        if beta[g_len + a] * s <= 0.0 {
            return None;
        }
    }
    if g_len > 0 && beta.rows(0, g_len).norm() <= 0.0 {
        return None;
    }
    let mut xp = DVector::zeros(p);
    for (a, &i) in support.iter().enumerate() {
        xp[i] = beta[a];
    }
    let hxp = q.hmul(&xp);
    let kp = pen.kkt(&xp, &(&hxp - &q.c));
    if kp < kkt_now {
        Some((xp, hxp, kp))
    } else {
        None
    }
}

/// Smallest penalty at which the group LASSO solution is zero.
pub fn lambda_max(ctx: &ModelContext, xty: &DVector<f64>) -> f64 {
    let n = ctx.n() as f64;
    let k = ctx.k();
    let group = xty.rows(0, k).norm() / n;
    let rest = xty.iter().skip(k).fold(0.0f64, |a, v| a.max(v.abs())) / n;
    group.max(rest)
}

/// Group LASSO from the moments `X^T y` and `y^T y`.
pub fn group_lasso_from_moments(
    ctx: &ModelContext,
    xty: &DVector<f64>,
    yty: f64,
    lambda: f64,
    warm: Option<&DVector<f64>>,
    opts: &SolverOptions,
) -> Result<GroupLassoFit> {
    check_lambda(lambda)?;
    if xty.len() != ctx.d() {
        return Err(Error::Dimension(format!("X^T y has length {}, expected {}", xty.len(), ctx.d())));
    }
    let inv_n = 1.0 / ctx.n() as f64;
    let q = Quadratic {
        g: ctx.gram().as_view(),
        scale: inv_n,
        c: xty * inv_n,
        zz_half: 0.5 * yty * inv_n,
    };
    let pen = Penalty { group: ctx.k(), lambda };
    let raw = solve(&q, &pen, ctx.lipschitz(), warm, opts);
    Ok(finish_group_fit(raw, lambda, ctx.k()))
}

fn finish_group_fit(raw: RawFit, lambda: f64, k: usize) -> GroupLassoFit {
    let active_set = (k..raw.x.len()).filter(|&j| raw.x[j] != 0.0).collect();
    GroupLassoFit {
        beta: raw.x.iter().copied().collect(),
        lambda,
        active_set,
        objective: raw.objective,
        iterations: raw.iterations,
        converged: raw.converged,
        kkt_residual: raw.kkt,
        trace: raw.trace,
    }
}

/// Group LASSO estimate with an `l2` penalty on the tested block and `l1`
/// penalties on the nuisance coefficients.
pub fn group_lasso(ctx: &ModelContext, y: &DVector<f64>, lambda: f64) -> Result<GroupLassoFit> {
    group_lasso_with(ctx, y, lambda, &SolverOptions::default())
}

pub fn group_lasso_with(
    ctx: &ModelContext,
    y: &DVector<f64>,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<GroupLassoFit> {
    if y.len() != ctx.n() {
        return Err(Error::Dimension(format!("response has length {}, expected {}", y.len(), ctx.n())));
    }
    group_lasso_from_moments(ctx, &ctx.xt_mul(y), y.dot(y), lambda, None, opts)
}

/// LASSO of `y - X_{1:k} b` on `X_{-1:k}`, computed from `X_{-1:k}^T y`.
pub fn conditional_lasso_from_xty(
    ctx: &ModelContext,
    nuisance_xty: &DVector<f64>,
    b: &DVector<f64>,
    lambda: f64,
    warm: Option<&DVector<f64>>,
    opts: &SolverOptions,
) -> Result<ConditionalFit> {
    check_lambda(lambda)?;
    let (k, d) = (ctx.k(), ctx.d());
    if b.len() != k || nuisance_xty.len() != d - k {
        return Err(Error::Dimension("conditional LASSO inputs have wrong length".into()));
    }
    let inv_n = 1.0 / ctx.n() as f64;
    let gram = ctx.gram();
    let cross = gram.view((k, 0), (d - k, k));
    let c = (nuisance_xty - cross * b) * inv_n;
    let q = Quadratic {
        g: gram.view((k, k), (d - k, d - k)),
        scale: inv_n,
        c,
        zz_half: 0.0,
    };
    let pen = Penalty { group: 0, lambda };
    // The nuisance block's top eigenvalue is bounded by the full design's.
    let raw = solve(&q, &pen, ctx.lipschitz(), warm, opts);
    let active_set = (0..raw.x.len()).filter(|&j| raw.x[j] != 0.0).map(|j| j + k).collect();
    Ok(ConditionalFit {
        beta: raw.x,
        active_set,
        iterations: raw.iterations,
        converged: raw.converged,
        kkt_residual: raw.kkt,
    })
}

/// `beta^lambda_{-1:k}(b)`: the nuisance LASSO with the tested block fixed at `b`.
pub fn conditional_lasso(
    ctx: &ModelContext,
    y: &DVector<f64>,
    b: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    if y.len() != ctx.n() {
        return Err(Error::Dimension(format!("response has length {}, expected {}", y.len(), ctx.n())));
    }
    let fit = conditional_lasso_from_xty(
        ctx,
        &ctx.nuisance_t_mul(y),
        b,
        lambda,
        None,
        &SolverOptions::default(),
    )?;
    if !fit.converged {
        return Err(Error::NotConverged {
            iterations: fit.iterations,
            kkt: fit.kkt_residual,
        });
    }
    Ok(fit.beta)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("penalty must be positive and finite, got {lambda}")))
    }
}

/// Penalty and tested-block point estimate used by the L-test family.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningChoice {
    pub lambda: f64,
    pub b_star: Vec<f64>,
    pub tuning_seed: u64,
    pub repeats: usize,
}

impl TuningChoice {
    pub fn b_star(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.b_star)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvOptions {
    pub folds: usize,
    pub grid_len: usize,
    /// Smallest grid value as a fraction of `lambda_max`.
    pub grid_ratio: f64,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            folds: 10,
            grid_len: 100,
            grid_ratio: 1e-3,
        }
    }
}

/// Cross-validation error curve over a decreasing penalty grid.
#[derive(Debug, Clone)]
pub struct CvPath {
    pub lambdas: Vec<f64>,
    pub mean_error: Vec<f64>,
    pub std_error: Vec<f64>,
}

impl CvPath {
    /// Index of the smallest mean error; ties go to the smaller penalty.
    pub fn min_rule(&self) -> usize {
        let mut best = 0;
        for i in 1..self.mean_error.len() {
            if self.mean_error[i] <= self.mean_error[best] {
                best = i;
            }
        }
        best
    }

    /// Largest penalty whose error is within one standard error of the minimum.
    pub fn one_se_rule(&self) -> usize {
        let best = self.min_rule();
        let cutoff = self.mean_error[best] + self.std_error[best];
        (0..=best)
            .find(|&i| self.mean_error[i] <= cutoff)
            .unwrap_or(best)
    }
}

/// Geometric grid of `len` penalties from `lmax` down to `ratio * lmax`.
pub fn lambda_grid(lmax: f64, len: usize, ratio: f64) -> Vec<f64> {
    if len == 1 {
        return vec![lmax];
    }
    let step = ratio.ln() / (len - 1) as f64;
    (0..len).map(|i| lmax * (step * i as f64).exp()).collect()
}

/// `folds`-fold cross-validation of the group LASSO of `y` on the design.
pub fn cross_validate<R: Rng + ?Sized>(
    ctx: &ModelContext,
    y: &DVector<f64>,
    opts: &CvOptions,
    rng: &mut R,
) -> Result<CvPath> {
    let n = ctx.n();
    let (d, k) = (ctx.d(), ctx.k());
    if opts.folds < 2 || opts.folds > n {
        return Err(Error::InvalidArgument(format!(
            "fold count {} must lie in [2, n = {n}]",
            opts.folds
        )));
    }
    let lmax = lambda_max(ctx, &ctx.xt_mul(y));
    if !(lmax > 0.0) {
        return Err(Error::DegenerateResidual);
    }
    let lambdas = lambda_grid(lmax, opts.grid_len, opts.grid_ratio);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut fold_of = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        fold_of[row] = pos % opts.folds;
    }

    let x = ctx.x();
    let mut errors = vec![vec![0.0; opts.folds]; lambdas.len()];
    let path_opts = SolverOptions::path();
    for f in 0..opts.folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        let xt = x.select_rows(train.iter());
        let yt = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
        let xv = x.select_rows(test.iter());
        let yv = DVector::from_iterator(test.len(), test.iter().map(|&i| y[i]));
        let inv_n = 1.0 / train.len() as f64;
        let gram = xt.transpose() * &xt;
        let lip = gram.symmetric_eigenvalues().max() * inv_n;
        let xty = xt.transpose() * &yt;
        let q = Quadratic {
            g: gram.as_view(),
            scale: inv_n,
            c: &xty * inv_n,
            zz_half: 0.5 * yt.dot(&yt) * inv_n,
        };
        let mut warm = DVector::zeros(d);
        for (li, &lam) in lambdas.iter().enumerate() {
            let pen = Penalty { group: k, lambda: lam };
            let raw = solve(&q, &pen, lip, Some(&warm), &path_opts);
            let resid = &yv - &xv * &raw.x;
            errors[li][f] = resid.norm_squared() / test.len() as f64;
            warm = raw.x;
        }
    }

    let folds = opts.folds as f64;
    let mut mean_error = Vec::with_capacity(lambdas.len());
    let mut std_error = Vec::with_capacity(lambdas.len());
    for errs in &errors {
        let mean = errs.iter().sum::<f64>() / folds;
        let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (folds - 1.0);
        mean_error.push(mean);
        std_error.push((var / folds).sqrt());
    }
    Ok(CvPath {
        lambdas,
        mean_error,
        std_error,
    })
}

/// Chooses `(lambda, b*)` by min-rule cross-validation on a conditional copy
/// `y~` of the response, so the choice is independent of `y` given the
/// sufficient statistic. With `repeats > 1`, averages over independent copies.
pub fn tune<R: Rng + ?Sized>(
    ctx: &ModelContext,
    state: &SufficientState,
    rng: &mut R,
    folds: usize,
    repeats: usize,
) -> Result<TuningChoice> {
    let opts = CvOptions {
        folds,
        ..CvOptions::default()
    };
    tune_with(ctx, state, rng.random(), &opts, repeats)
}

/// [`tune`] with an explicit seed and grid settings.
pub fn tune_with(
    ctx: &ModelContext,
    state: &SufficientState,
    tuning_seed: u64,
    opts: &CvOptions,
    repeats: usize,
) -> Result<TuningChoice> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("tuning repeats must be at least 1".into()));
    }
    let k = ctx.k();
    let mut rng = ChaCha8Rng::seed_from_u64(tuning_seed);
    let mut lambda_sum = 0.0;
    let mut b_sum = DVector::<f64>::zeros(k);
    for _ in 0..repeats {
        let (_, y_tilde) = sample_conditional(ctx, state, &mut rng);
        let path = cross_validate(ctx, &y_tilde, opts, &mut rng)?;
        let lambda = path.lambdas[path.min_rule()];
        let fit = group_lasso(ctx, &y_tilde, lambda)?;
        lambda_sum += lambda;
        b_sum += fit.head(k);
    }
    let r = repeats as f64;
    Ok(TuningChoice {
        lambda: lambda_sum / r,
        b_star: (b_sum / r).iter().copied().collect(),
        tuning_seed,
        repeats,
    })
}
