//! The inverse map `f^{-1}`, its gradient on spheres, the affine piece
//! `(nu, A)`, the L statistic and the Monte Carlo p-value engine shared by
//! the sphere-sampling tests.

use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{sample_sphere_head, sufficient_state, ModelContext, SufficientState};
use crate::outcome::{Method, TestOutcome};
use crate::solver::{
    conditional_lasso_from_xty, group_lasso_from_moments, ConditionalFit, SolverOptions,
    TuningChoice,
};

/// `||b*||` at or below this routes to the `r -> 0` limit branch.
pub const ZERO_RADIUS: f64 = 1e-10;
/// Largest condition number accepted for the gradient of `f^{-1}`.
pub const MAX_GRADIENT_CONDITION: f64 = 1e12;

fn conditional_fit(
    ctx: &ModelContext,
    state: &SufficientState,
    lambda: f64,
    b: &DVector<f64>,
) -> Result<ConditionalFit> {
    let fit = conditional_lasso_from_xty(ctx, &state.xty, b, lambda, None, &SolverOptions::default())?;
    if !fit.converged {
        return Err(Error::NotConverged {
            iterations: fit.iterations,
            kkt: fit.kkt_residual,
        });
    }
    Ok(fit)
}

/// `X_{1:k}^T (I - P_A) X_{1:k}` from the Gram matrix.
fn tested_residual_gram(ctx: &ModelContext, active: &[usize]) -> Result<DMatrix<f64>> {
    let k = ctx.k();
    let g = ctx.gram();
    let g11 = g.view((0, 0), (k, k)).into_owned();
    if active.is_empty() {
        return Ok(g11);
    }
    let m = active.len();
    let gaa = DMatrix::from_fn(m, m, |a, b| g[(active[a], active[b])]);
    let ga1 = DMatrix::from_fn(m, k, |a, j| g[(active[a], j)]);
    let chol = gaa.cholesky().ok_or(Error::RankDeficient { ratio: 0.0 })?;
    Ok(&g11 - ga1.transpose() * chol.solve(&ga1))
}

/// `X_{1:k}^T P_A v` given `X_A^T v`.
fn tested_projected(ctx: &ModelContext, active: &[usize], xa_v: &DVector<f64>) -> Result<DVector<f64>> {
    let k = ctx.k();
    if active.is_empty() {
        return Ok(DVector::zeros(k));
    }
    let g = ctx.gram();
    let m = active.len();
    let gaa = DMatrix::from_fn(m, m, |a, b| g[(active[a], active[b])]);
    let ga1 = DMatrix::from_fn(m, k, |a, j| g[(active[a], j)]);
    let chol = gaa.cholesky().ok_or(Error::RankDeficient { ratio: 0.0 })?;
    Ok(ga1.transpose() * chol.solve(xa_v))
}

/// `X_{1:k}^T (yhat - X_{-1:k} beta_nuis)`.
fn tested_nuisance_residual(ctx: &ModelContext, state: &SufficientState, nuis: &DVector<f64>) -> DVector<f64> {
    let (k, d) = (ctx.k(), ctx.d());
    let x1_yhat = ctx.tested_t_mul(&state.yhat);
    let cross = ctx.gram().view((0, k), (k, d - k));
    x1_yhat - cross * nuis
}

/// `f^{-1}(b)`: the unique `u_{1:k}` for which the group LASSO head equals `b`.
pub fn f_inverse(ctx: &ModelContext, state: &SufficientState, lambda: f64, b: &DVector<f64>) -> Result<DVector<f64>> {
    let nuis = conditional_fit(ctx, state, lambda, b)?.beta;
    f_inverse_with(ctx, state, lambda, b, &nuis)
}

/// [`f_inverse`] with a precomputed `beta^lambda_{-1:k}(b)`.
pub fn f_inverse_with(
    ctx: &ModelContext,
    state: &SufficientState,
    lambda: f64,
    b: &DVector<f64>,
    nuisance: &DVector<f64>,
) -> Result<DVector<f64>> {
    let k = ctx.k();
    if b.len() != k {
        return Err(Error::Dimension(format!("b has length {}, expected {k}", b.len())));
    }
    let norm = b.norm();
    if norm == 0.0 {
        return Err(Error::ZeroInput);
    }
    let n = ctx.n() as f64;
    // -X1^T (yhat - X1 b - X_{-1} beta) + n lambda b / ||b||
    let mut w = -tested_nuisance_residual(ctx, state, nuisance);
    w += ctx.gram().view((0, 0), (k, k)) * b;
    w += b * (n * lambda / norm);
    Ok(ctx.x1t_v1_inv() * w / state.sigma_hat)
}

/// `X_{1:k}^T (I - P_A) X_{1:k} + (n lambda / r) I`.
fn gradient_core(ctx: &ModelContext, active: &[usize], lambda: f64, r: f64) -> Result<DMatrix<f64>> {
    let mut m = tested_residual_gram(ctx, active)?;
    let shift = ctx.n() as f64 * lambda / r;
    for i in 0..ctx.k() {
        m[(i, i)] += shift;
    }
    Ok(m)
}

/// Gradient of `f^{-1}` restricted to the sphere of radius `r`, with the
/// active set taken from the conditional LASSO at `b_star`.
pub fn grad_f_inverse(
    ctx: &ModelContext,
    state: &SufficientState,
    lambda: f64,
    b_star: &DVector<f64>,
    r: f64,
) -> Result<DMatrix<f64>> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {r}")));
    }
    let fit = conditional_fit(ctx, state, lambda, b_star)?;
    let core = gradient_core(ctx, &fit.active_set, lambda, r)?;
    Ok(ctx.x1t_v1_inv() * core / state.sigma_hat)
}

/// Local affine description `f^{-1}(b) ~ grad_inv b + nu` around `b*`
/// together with the premultiplier `A` of the L statistic.
#[derive(Debug, Clone, Serialize)]
pub struct AffinePiece {
    /// `grad f^{-1}(b*; ||b*||)`; absent on the limit branch.
    #[serde(skip)]
    pub grad_inv: Option<DMatrix<f64>>,
    #[serde(skip)]
    pub nu: DVector<f64>,
    #[serde(skip)]
    pub a: DMatrix<f64>,
    #[serde(skip)]
    pub b_star: DVector<f64>,
    pub lambda: f64,
    pub active_set: Vec<usize>,
    pub limit_branch: bool,
}

/// Builds `(nu, A)` at `b*`. For `||b*|| <= ZERO_RADIUS` uses the limit
/// `A = (sigma_hat / (n lambda)) V_{1:k}^T X_{1:k} X_{1:k}^T V_{1:k}` and
/// drops the `b*` term from `nu`.
pub fn affine_piece(
    ctx: &ModelContext,
    state: &SufficientState,
    lambda: f64,
    b_star: &DVector<f64>,
) -> Result<AffinePiece> {
    let k = ctx.k();
    if b_star.len() != k {
        return Err(Error::Dimension(format!("b* has length {}, expected {k}", b_star.len())));
    }
    let n = ctx.n() as f64;
    let radius = b_star.norm();
    let limit = radius <= ZERO_RADIUS;
    let b_eff = if limit { DVector::zeros(k) } else { b_star.clone() };
    let fit = conditional_fit(ctx, state, lambda, &b_eff)?;
    let active = fit.active_set.clone();

    // nu = -(1/sigma_hat) (X1^T V1)^{-1} X1^T (yhat - X_{-1} beta - P_A X1 b*)
    let mut inner = tested_nuisance_residual(ctx, state, &fit.beta);
    if !limit {
        let g = ctx.gram();
        let xa_x1b = DVector::from_iterator(
            active.len(),
            active.iter().map(|&j| (g.view((j, 0), (1, k)) * b_star)[0]),
        );
        inner -= tested_projected(ctx, &active, &xa_x1b)?;
    }
    let nu = -(ctx.x1t_v1_inv() * inner) / state.sigma_hat;

    let w = ctx.x1t_v1();
    let (grad_inv, a) = if limit {
        (None, w.transpose() * w * (state.sigma_hat / (n * lambda)))
    } else {
        let core = gradient_core(ctx, &active, lambda, radius)?;
        let grad = ctx.x1t_v1_inv() * &core / state.sigma_hat;
        let sv = grad.clone().singular_values();
        let cond = sv.max() / sv.min();
        if !(cond <= MAX_GRADIENT_CONDITION) {
            return Err(Error::SingularGradient { cond });
        }
        let core_inv = core
            .clone()
            .cholesky()
            .ok_or(Error::SingularGradient { cond: f64::INFINITY })?;
        // V1^T X1 grad^{-1} = sigma_hat W^T core^{-1} W with W = X1^T V1.
        let a = w.transpose() * core_inv.solve(w) * state.sigma_hat;
        (Some(grad), a)
    };
    Ok(AffinePiece {
        grad_inv,
        nu,
        a: symmetrize(a),
        b_star: b_eff,
        lambda,
        active_set: active,
        limit_branch: limit,
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `L = ||A (u_{1:k} - nu)||`.
pub fn l_statistic(piece: &AffinePiece, u_head: &DVector<f64>) -> f64 {
    (&piece.a * (u_head - &piece.nu)).norm()
}

/// The no-recentering statistic `||A u_{1:k}||`.
pub fn phi_statistic(piece: &AffinePiece, u_head: &DVector<f64>) -> f64 {
    (&piece.a * u_head).norm()
}

/// Monte Carlo p-value `(1 + #{T_i >= T_obs}) / (M + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McPValue {
    pub p: f64,
    pub m: usize,
    pub ge_count: usize,
    /// Samples whose statistic could not be computed; included in `ge_count`.
    pub failed: usize,
}

/// Rng for MC sample `index` under `seed`: an independent ChaCha stream.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Evaluates `stat` on `m` independent streams in parallel and compares to
/// `observed`. A `None` from `stat` is counted as `>=`.
pub fn mc_pvalue<F>(observed: f64, m: usize, seed: u64, stat: F) -> Result<McPValue>
where
    F: Fn(&mut ChaCha8Rng) -> Option<f64> + Sync,
{
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one Monte Carlo sample".into()));
    }
    let (ge_count, failed) = (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            match stat(&mut rng) {
                Some(t) if t >= observed => (1usize, 0usize),
                Some(_) => (0, 0),
                None => (1, 1),
            }
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(McPValue {
        p: (1 + ge_count) as f64 / (m + 1) as f64,
        m,
        ge_count,
        failed,
    })
}

fn tuned_meta(out: &mut TestOutcome, tuning: &TuningChoice) {
    out.meta.lambda = Some(tuning.lambda);
    out.meta.b_star = Some(tuning.b_star.clone());
    out.meta.tuning_seed = Some(tuning.tuning_seed);
}

fn mc_outcome(method: Method, statistic: f64, mc: McPValue, mc_seed: u64) -> TestOutcome {
    let mut out = TestOutcome::new(method, statistic, mc.p);
    out.mc_samples = Some(mc.m);
    out.meta.mc_seed = Some(mc_seed);
    out.meta.ge_count = Some(mc.ge_count);
    out.meta.unconverged = mc.failed;
    out
}

/// L-test with a precomputed state and affine piece.
pub fn l_test_with_piece(
    ctx: &ModelContext,
    state: &SufficientState,
    piece: &AffinePiece,
    mc_samples: usize,
    mc_seed: u64,
) -> Result<TestOutcome> {
    let (k, dim) = (ctx.k(), ctx.basis().dim());
    let observed = l_statistic(piece, &state.u_head(k));
    let mc = mc_pvalue(observed, mc_samples, mc_seed, |rng| {
        Some(l_statistic(piece, &sample_sphere_head(dim, k, rng)))
    })?;
    let mut out = mc_outcome(Method::L, observed, mc, mc_seed);
    out.meta.lambda = Some(piece.lambda);
    if piece.limit_branch {
        out.meta.branch = Some("limit".into());
    }
    Ok(out)
}

/// L-test: MC p-value of `||A (u_{1:k} - nu)||` with `(nu, A)` built at the
/// tuned `(lambda, b*)`.
pub fn l_test<R: Rng + ?Sized>(
    ctx: &ModelContext,
    y: &DVector<f64>,
    mc_samples: usize,
    rng: &mut R,
    tuning: &TuningChoice,
) -> Result<TestOutcome> {
    let state = sufficient_state(ctx, y)?;
    let piece = affine_piece(ctx, &state, tuning.lambda, &tuning.b_star())?;
    let mut out = l_test_with_piece(ctx, &state, &piece, mc_samples, rng.random())?;
    tuned_meta(&mut out, tuning);
    Ok(out)
}

/// phi-test: like the L-test but without recentering.
pub fn phi_test_with_piece(
    ctx: &ModelContext,
    state: &SufficientState,
    piece: &AffinePiece,
    mc_samples: usize,
    mc_seed: u64,
) -> Result<TestOutcome> {
    let (k, dim) = (ctx.k(), ctx.basis().dim());
    let observed = phi_statistic(piece, &state.u_head(k));
    let mc = mc_pvalue(observed, mc_samples, mc_seed, |rng| {
        Some(phi_statistic(piece, &sample_sphere_head(dim, k, rng)))
    })?;
    let mut out = mc_outcome(Method::Phi, observed, mc, mc_seed);
    out.meta.lambda = Some(piece.lambda);
    Ok(out)
}

/// Solver settings for the per-sample fits of the group LASSO MC test.
fn mc_solver_options() -> SolverOptions {
    SolverOptions {
        kkt_tol: 1e-9,
        ..SolverOptions::default()
    }
}

/// Group LASSO MC test with a precomputed state.
pub fn glasso_mc_test_with_state(
    ctx: &ModelContext,
    state: &SufficientState,
    lambda: f64,
    mc_samples: usize,
    mc_seed: u64,
) -> Result<TestOutcome> {
    let (k, dim) = (ctx.k(), ctx.basis().dim());
    let opts = mc_solver_options();
    let w = ctx.x1t_v1();
    // X^T y~ = X^T yhat + sigma_hat [W u~_{1:k}; 0] since X^T V = [W 0; 0 0].
    let xt_yhat = ctx.xt_mul(&state.yhat);
    let xty_obs = {
        let mut v = xt_yhat.clone();
        let shift = w * state.u_head(k) * state.sigma_hat;
        v.rows_mut(0, k).add_assign(&shift);
        v
    };
    let statistic = |head: &DVector<f64>| (w.transpose() * head).norm();
    let obs_fit = group_lasso_from_moments(ctx, &xty_obs, state.yty, lambda, None, &opts)?;
    if !obs_fit.converged {
        return Err(Error::NotConverged {
            iterations: obs_fit.iterations,
            kkt: obs_fit.kkt_residual,
        });
    }
    let observed = statistic(&obs_fit.head(k));
    let warm = obs_fit.beta();
    let mc = mc_pvalue(observed, mc_samples, mc_seed, |rng| {
        let u = sample_sphere_head(dim, k, rng);
        let mut xty = xt_yhat.clone();
        xty.rows_mut(0, k).add_assign(&(w * u * state.sigma_hat));
        let fit = group_lasso_from_moments(ctx, &xty, state.yty, lambda, Some(&warm), &opts).ok()?;
        if !fit.converged {
            return None;
        }
        Some(statistic(&DVector::from_column_slice(&fit.beta[..k])))
    })?;
    Ok(mc_outcome(Method::GlassoMc, observed, mc, mc_seed))
}

/// Group LASSO MC test: MC p-value of `T = ||V_{1:k}^T X_{1:k} beta_hat_{1:k}||`
/// with a full group LASSO fit per conditional sample.
pub fn glasso_mc_test<R: Rng + ?Sized>(
    ctx: &ModelContext,
    y: &DVector<f64>,
    lambda: f64,
    mc_samples: usize,
    rng: &mut R,
) -> Result<TestOutcome> {
    let state = sufficient_state(ctx, y)?;
    let mut out = glasso_mc_test_with_state(ctx, &state, lambda, mc_samples, rng.random())?;
    out.meta.lambda = Some(lambda);
    Ok(out)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;
    use crate::solver::group_lasso;
    use rand_distr::StandardNormal;

    fn instance(seed: u64) -> (ModelContext, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d, k) = (40, 10, 3);
        let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut beta = DVector::zeros(d);
        beta[0] = 0.8;
        beta[2] = -0.6;
        beta[5] = 1.0;
        let y = &x * beta + DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        (build_model(x, k).unwrap(), y)
    }

    #[test]
    fn roundtrip_recovers_u_head() {
        let (ctx, y) = instance(11);
        let st = sufficient_state(&ctx, &y).unwrap();
        let lambda = 0.05;
        let fit = group_lasso(&ctx, &y, lambda).unwrap();
        let b = fit.head(3);
        assert!(b.norm() > 0.0);
        let u = f_inverse(&ctx, &st, lambda, &b).unwrap();
        assert!((u - st.u_head(3)).amax() < 1e-6);
    }

    #[test]
    fn zero_input_is_rejected() {
        let (ctx, y) = instance(12);
        let st = sufficient_state(&ctx, &y).unwrap();
        let err = f_inverse(&ctx, &st, 0.1, &DVector::zeros(3)).unwrap_err();
        assert_eq!(err, Error::ZeroInput);
    }

    #[test]
    fn l_statistic_vanishes_at_nu() {
        let (ctx, y) = instance(13);
        let st = sufficient_state(&ctx, &y).unwrap();
        let piece = affine_piece(&ctx, &st, 0.05, &DVector::from_vec(vec![0.3, 0.0, -0.2])).unwrap();
        assert_eq!(l_statistic(&piece, &piece.nu), 0.0);
    }

    #[test]
    fn mc_pvalue_counts_failures_as_exceedances() {
        let mc = mc_pvalue(0.5, 9, 1, |_| None).unwrap();
        assert_eq!(mc.ge_count, 9);
        assert_eq!(mc.failed, 9);
        assert_eq!(mc.p, 1.0);
        let mc = mc_pvalue(f64::INFINITY, 9, 1, |_| Some(0.0)).unwrap();
        assert!((mc.p - 0.1).abs() < 1e-15);
    }
}
