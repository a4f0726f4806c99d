//! Classical baselines: the F-test, OLS sub-vector identities, the
//! one-sided t-test and the oracle direction test.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{ModelContext, SufficientState};
use crate::outcome::{Method, TestOutcome};
use crate::special::{beta_sf, f_sf, t_sf};

/// Classical F-test of `H: beta_{1:k} = 0` from the two residual sums of squares.
pub fn f_test(ctx: &ModelContext, y: &DVector<f64>) -> Result<TestOutcome> {
    check_response(ctx, y)?;
    let (k, df) = (ctx.k(), ctx.resid_df());
    if df == 0 {
        return Err(Error::DegenerateResidual);
    }
    let rss0 = (y - ctx.project_nuisance(y)).norm_squared();
    let rss1 = (y - ctx.project_full(y)).norm_squared();
    if !(rss1 > 0.0) || !(rss0 > 0.0) {
        return Err(Error::DegenerateResidual);
    }
    let f = ((rss0 - rss1).max(0.0) / k as f64) / (rss1 / df as f64);
    Ok(TestOutcome::new(Method::F, f, f_sf(f, k as f64, df as f64)))
}

/// The F-test written in terms of the unit vector: rejects for large
/// `||u_{1:k}||`, whose square is `Beta(k/2, (n-d)/2)` under the null.
pub fn f_test_conditional(ctx: &ModelContext, state: &SufficientState) -> Result<TestOutcome> {
    let (k, df) = (ctx.k(), ctx.resid_df());
    if df == 0 {
        return Err(Error::DegenerateResidual);
    }
    let head = state.u.rows(0, k).norm_squared().min(1.0);
    let p = beta_sf(k as f64 / 2.0, df as f64 / 2.0, head);
    let mut out = TestOutcome::new(Method::F, head.sqrt(), p);
    out.meta.branch = Some("conditional".into());
    Ok(out)
}

/// Full OLS coefficient vector.
pub fn ols_full(ctx: &ModelContext, y: &DVector<f64>) -> Result<DVector<f64>> {
    check_response(ctx, y)?;
    let xty = ctx.xt_mul(y);
    ctx.gram()
        .clone()
        .cholesky()
        .map(|c| c.solve(&xty))
        .ok_or(Error::RankDeficient { ratio: 0.0 })
}

/// First `k` OLS coefficients as `S^{-1} X_{1:k}^T (I - P_{-1:k}) y`.
pub fn ols_subvector(ctx: &ModelContext, y: &DVector<f64>) -> Result<DVector<f64>> {
    check_response(ctx, y)?;
    let resid = y - ctx.project_nuisance(y);
    Ok(ctx.schur().solve(&ctx.tested_t_mul(&resid)))
}

/// First `k` OLS coefficients as `sigma_hat (V_{1:k}^T X_{1:k})^{-1} u_{1:k}`.
pub fn ols_from_unit(ctx: &ModelContext, state: &SufficientState) -> DVector<f64> {
    let k = ctx.k();
    ctx.x1t_v1_inv().transpose() * state.u.rows(0, k) * state.sigma_hat
}

/// One-sided t-test of `beta_1` for `k = 1`, alternative `sign * beta_1 > 0`.
pub fn one_sided_t_test(ctx: &ModelContext, y: &DVector<f64>, sign: f64) -> Result<TestOutcome> {
    if ctx.k() != 1 {
        return Err(Error::InvalidArgument("the one-sided t-test needs k = 1".into()));
    }
    let df = ctx.resid_df();
    if df == 0 {
        return Err(Error::DegenerateResidual);
    }
    let beta = ols_full(ctx, y)?;
    let rss = (y - ctx.x() * &beta).norm_squared();
    if !(rss > 0.0) {
        return Err(Error::DegenerateResidual);
    }
    let inv = ctx
        .gram()
        .clone()
        .try_inverse()
        .ok_or(Error::RankDeficient { ratio: 0.0 })?;
    let se = (rss / df as f64 * inv[(0, 0)]).sqrt();
    let t = sign.signum() * beta[0] / se;
    let mut out = TestOutcome::new(Method::Oracle, t, t_sf(t, df as f64));
    out.meta.branch = Some("t".into());
    Ok(out)
}

/// Oracle test: one-sided t-test on the coefficient of `X_{1:k} beta_{1:k} / ||beta_{1:k}||`
/// in the model with the nuisance columns, `n - d + k - 1` degrees of freedom.
pub fn oracle_test(ctx: &ModelContext, y: &DVector<f64>, beta_true: &DVector<f64>) -> Result<TestOutcome> {
    check_response(ctx, y)?;
    let (k, d) = (ctx.k(), ctx.d());
    if beta_true.len() != d {
        return Err(Error::Dimension(format!(
            "true coefficient vector has length {}, expected {d}",
            beta_true.len()
        )));
    }
    let head = beta_true.rows(0, k);
    let norm = head.norm();
    if !(norm > 0.0) {
        return Err(Error::NullDirection);
    }
    let df = ctx.resid_df() + k - 1;
    if df == 0 {
        return Err(Error::DegenerateResidual);
    }
    let direction = ctx.design().tested() * head / norm;
    let x_res = &direction - ctx.project_nuisance(&direction);
    let y_res = y - ctx.project_nuisance(y);
    let sxx = x_res.norm_squared();
    let sxy = x_res.dot(&y_res);
    let rss = (y_res.norm_squared() - sxy * sxy / sxx).max(0.0);
    if !(rss > 0.0) {
        return Err(Error::DegenerateResidual);
    }
    let s = (rss / df as f64).sqrt();
    let t = sxy / sxx.sqrt() / s;
    Ok(TestOutcome::new(Method::Oracle, t, t_sf(t, df as f64)))
}

fn check_response(ctx: &ModelContext, y: &DVector<f64>) -> Result<()> {
    if y.len() != ctx.n() {
        return Err(Error::Dimension(format!(
            "response has length {}, design has {} rows",
            y.len(),
            ctx.n()
        )));
    }
    Ok(())
}
