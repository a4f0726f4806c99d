mod common;

use common::*;
use ltest_core::model::{build_model, sufficient_state};
use ltest_core::solver::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// KKT residual of the group LASSO computed from scratch.
fn kkt(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, k: usize, lambda: f64) -> f64 {
    let n = x.nrows() as f64;
    let grad = x.transpose() * (y - x * beta) / n;
    let b1 = beta.rows(0, k);
    let g1 = grad.rows(0, k);
    let mut worst = if b1.norm() > 0.0 {
        (g1 - b1 * (lambda / b1.norm())).norm()
    } else {
        (g1.norm() - lambda).max(0.0)
    };
    for j in k..x.ncols() {
        let r = if beta[j] != 0.0 {
            (grad[j] - lambda * beta[j].signum()).abs()
        } else {
            (grad[j].abs() - lambda).max(0.0)
        };
        worst = worst.max(r);
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn fits_satisfy_kkt(seed in any::<u64>(), frac in 0.01f64..0.9) {
        let (ctx, y, _) = sparse_instance(50, 15, 4, 0.5, seed);
        let lambda = frac * lambda_max(&ctx, &ctx.xt_mul(&y));
        let fit = group_lasso(&ctx, &y, lambda).unwrap();
        prop_assert!(fit.converged);
        prop_assert!(kkt(ctx.x(), &y, &fit.beta(), 4, lambda) <= 1e-7);
        let active: Vec<usize> = (4..15).filter(|&j| fit.beta[j] != 0.0).collect();
        prop_assert_eq!(&fit.active_set, &active);
    }

    #[test]
    fn objective_never_increases(seed in any::<u64>(), frac in 0.01f64..0.5) {
        let (ctx, y, _) = sparse_instance(40, 20, 5, 0.8, seed);
        let lambda = frac * lambda_max(&ctx, &ctx.xt_mul(&y));
        let opts = SolverOptions { record_trace: true, ..SolverOptions::default() };
        let fit = group_lasso_with(&ctx, &y, lambda, &opts).unwrap();
        for w in fit.trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn blockwise_fixed_point(seed in any::<u64>(), frac in 0.02f64..0.6) {
        let (ctx, y, _) = sparse_instance(50, 15, 4, 0.7, seed);
        let lambda = frac * lambda_max(&ctx, &ctx.xt_mul(&y));
        let fit = group_lasso(&ctx, &y, lambda).unwrap();
        let nuis = conditional_lasso(&ctx, &y, &fit.head(4), lambda).unwrap();
        let expect = DVector::from_column_slice(&fit.beta[4..]);
        prop_assert!((nuis - expect).amax() <= 1e-6);
    }

    #[test]
    fn conditional_lasso_sees_only_nuisance_moments(seed in any::<u64>()) {
        let (ctx, y, _) = sparse_instance(30, 10, 3, 0.5, seed);
        let st = sufficient_state(&ctx, &y).unwrap();
        let mut r = rng(seed ^ 7);
        let w = ltest_core::model::sample_sphere(ctx.basis().dim(), &mut r);
        let y2 = st.reconstruct(&ctx, &w);
        let b = DVector::from_vec(vec![0.2, -0.1, 0.4]);
        let a = conditional_lasso(&ctx, &y, &b, 0.05).unwrap();
        let c = conditional_lasso(&ctx, &y2, &b, 0.05).unwrap();
        prop_assert!((a - c).amax() <= 1e-8);
    }
}

#[test]
fn orthonormal_design_matches_closed_form() {
    let n = 40;
    let mut r = rng(10);
    let g = gaussian_matrix(n, 6, &mut r);
    let q = g.qr().q() * (n as f64).sqrt();
    let ctx = build_model(q.clone(), 2).unwrap();
    let y = gaussian_vector(n, &mut r) * 2.0;
    let z = q.transpose() * &y / n as f64;
    for &lambda in &[0.05, 0.2, 0.5] {
        let fit = group_lasso(&ctx, &y, lambda).unwrap();
        let mut expect = DVector::zeros(6);
        let zn = z.rows(0, 2).norm();
        if zn > lambda {
            expect.rows_mut(0, 2).copy_from(&(z.rows(0, 2) * (1.0 - lambda / zn)));
        }
        for j in 2..6 {
            expect[j] = z[j].signum() * (z[j].abs() - lambda).max(0.0);
        }
        assert!((fit.beta() - expect).amax() <= 1e-7, "lambda {lambda}");
    }
}

#[test]
fn penalty_above_threshold_gives_zero() {
    let (ctx, y, _) = sparse_instance(40, 12, 3, 1.0, 11);
    let lmax = lambda_max(&ctx, &ctx.xt_mul(&y));
    let fit = group_lasso(&ctx, &y, lmax).unwrap();
    assert!(fit.beta.iter().all(|&b| b == 0.0));
}

#[test]
fn vanishing_penalty_is_ols() {
    let (ctx, y, _) = sparse_instance(40, 12, 3, 1.0, 12);
    let fit = group_lasso(&ctx, &y, 1e-12).unwrap();
    let ols = ltest_core::classic::ols_full(&ctx, &y).unwrap();
    assert!((fit.beta() - ols).amax() <= 1e-5);
}

#[test]
fn conditional_lasso_zero_above_threshold() {
    let (ctx, y, _) = sparse_instance(40, 12, 3, 1.0, 13);
    let b = DVector::from_vec(vec![1.0, 0.0, -1.0]);
    let resid = &y - ctx.design().tested() * &b;
    let thr = ctx.nuisance_t_mul(&resid).amax() / 40.0;
    let out = conditional_lasso(&ctx, &y, &b, thr).unwrap();
    assert!(out.iter().all(|&v| v == 0.0));
}

#[test]
fn tuning_contract() {
    let (ctx, y, _) = sparse_instance(60, 20, 5, 0.0, 14);
    let st = sufficient_state(&ctx, &y).unwrap();
    let opts = CvOptions { folds: 10, ..CvOptions::default() };
    let a = tune_with(&ctx, &st, 5, &opts, 1).unwrap();
    let b = tune_with(&ctx, &st, 5, &opts, 1).unwrap();
    assert_eq!(a, b);
    assert!(a.lambda > 0.0 && a.b_star.iter().all(|v| v.is_finite()));
    // Same sufficient statistic, different observed direction: same choice.
    let y2 = st.reconstruct(&ctx, &ltest_core::model::sample_sphere(ctx.basis().dim(), &mut rng(1)));
    let st2 = sufficient_state(&ctx, &y2).unwrap();
    let c = tune_with(&ctx, &st2, 5, &opts, 1).unwrap();
    assert!((c.lambda - a.lambda).abs() <= 1e-12 * a.lambda);
    assert!((c.b_star() - a.b_star()).amax() <= 1e-9);
    let avg = tune_with(&ctx, &st, 5, &opts, 3).unwrap();
    assert_eq!(avg.repeats, 3);
}

#[test]
fn min_rule_error_at_most_one_se_rule_error() {
    let (ctx, y, _) = sparse_instance(60, 20, 5, 0.6, 15);
    let path = cross_validate(&ctx, &y, &CvOptions::default(), &mut rng(2)).unwrap();
    assert_eq!(path.lambdas.len(), 100);
    let (a, b) = (path.min_rule(), path.one_se_rule());
    assert!(path.mean_error[a] <= path.mean_error[b]);
    assert!(path.lambdas[b] >= path.lambdas[a]);
}
