mod common;

use common::*;
use ltest_core::ltest::*;
use ltest_core::mcfree::mcfree_test_with_piece;
use ltest_core::classic::f_test;
use ltest_core::model::{build_model, sample_sphere_head, sufficient_state, ModelContext, SufficientState};
use ltest_core::simlab::orthogonalize_blocks;
use ltest_core::solver::{conditional_lasso, group_lasso};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn setup(seed: u64, k: usize) -> (ModelContext, DVector<f64>, SufficientState) {
    let (ctx, y, _) = sparse_instance(50, 14, k, 0.6, seed);
    let st = sufficient_state(&ctx, &y).unwrap();
    (ctx, y, st)
}

fn orthogonal_instance(seed: u64, n: usize, d: usize, k: usize) -> (ModelContext, DVector<f64>, SufficientState) {
    let mut r = rng(seed);
    let mut x = gaussian_matrix(n, d, &mut r);
    orthogonalize_blocks(&mut x, k);
    let mut beta = DVector::zeros(d);
    beta[0] = 0.4;
    beta[d - 1] = 1.0;
    let y = &x * beta + gaussian_vector(n, &mut r);
    let ctx = build_model(x, k).unwrap();
    let st = sufficient_state(&ctx, &y).unwrap();
    (ctx, y, st)
}

fn random_head(k: usize, scale: f64, r: &mut rand_chacha::ChaCha8Rng) -> DVector<f64> {
    gaussian_vector(k, r) * scale
}

/// Orthonormal tangent directions to the sphere through `b`.
fn tangents(b: &DVector<f64>) -> Vec<DVector<f64>> {
    let k = b.len();
    let mut m = DMatrix::identity(k, k);
    m.set_column(0, b);
    let q = m.qr().q();
    (1..k).map(|j| q.column(j).into_owned()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn inverse_map_recovers_unit_head(seed in any::<u64>(), frac in 0.01f64..0.3) {
        let (ctx, y, st) = setup(seed, 3);
        let lmax = ltest_core::solver::lambda_max(&ctx, &ctx.xt_mul(&y));
        let lambda = frac * lmax;
        let fit = group_lasso(&ctx, &y, lambda).unwrap();
        let b = fit.head(3);
        prop_assume!(b.norm() > 1e-6);
        let u = f_inverse(&ctx, &st, lambda, &b).unwrap();
        prop_assert!((u - st.u_head(3)).amax() <= 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>()) {
        let (ctx, _, st) = setup(seed, 4);
        let mut r = rng(seed ^ 1);
        let b = random_head(4, 0.5, &mut r);
        let lambda = 0.05;
        let grad = grad_f_inverse(&ctx, &st, lambda, &b, b.norm()).unwrap();
        let base = affine_piece(&ctx, &st, lambda, &b).unwrap();
        let h = 1e-6 * b.norm().max(1.0);
        for t in tangents(&b).into_iter().take(2) {
            let (bp, bm) = (&b + &t * h, &b - &t * h);
            let same = |v: &DVector<f64>| affine_piece(&ctx, &st, lambda, v).map(|p| p.active_set == base.active_set).unwrap_or(false);
            if !(same(&bp) && same(&bm)) {
                continue;
            }
            let fd = (f_inverse(&ctx, &st, lambda, &bp).unwrap() - f_inverse(&ctx, &st, lambda, &bm).unwrap()) / (2.0 * h);
            let an = &grad * &t;
            prop_assert!((&fd - &an).amax() <= 1e-5 * an.amax().max(1.0), "fd {fd} an {an}");
        }
    }

    #[test]
    fn inverse_map_is_affine_on_the_sphere_piece(seed in any::<u64>()) {
        let (ctx, _, st) = setup(seed, 3);
        let mut r = rng(seed ^ 2);
        let b = random_head(3, 0.4, &mut r);
        let lambda = 0.04;
        let piece = affine_piece(&ctx, &st, lambda, &b).unwrap();
        let grad = piece.grad_inv.clone().unwrap();
        let t = &tangents(&b)[0];
        let moved = (&b + t * 1e-4).normalize() * b.norm();
        let other = affine_piece(&ctx, &st, lambda, &moved).unwrap();
        prop_assume!(other.active_set == piece.active_set);
        let direct = f_inverse(&ctx, &st, lambda, &moved).unwrap();
        let affine = &grad * &moved + &piece.nu;
        prop_assert!((direct - affine).amax() <= 1e-8);
        // At b* itself the piece is exact too.
        let at = f_inverse(&ctx, &st, lambda, &b).unwrap();
        prop_assert!((at - (&grad * &b + &piece.nu)).amax() <= 1e-8);
    }

    #[test]
    fn l_statistic_properties(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let (ctx, _, st) = setup(seed, 3);
        let b = DVector::from_vec(vec![0.3, -0.2, 0.1]);
        let piece = affine_piece(&ctx, &st, 0.05, &b).unwrap();
        let mut r = rng(seed);
        let u = sample_sphere_head(ctx.basis().dim(), 3, &mut r);
        let l = l_statistic(&piece, &u);
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l_statistic(&piece, &piece.nu), 0.0);
        let mut scaled = piece.clone();
        scaled.a *= scale;
        prop_assert!((l_statistic(&scaled, &u) - scale * l).abs() <= 1e-12 * (scale * l).max(1.0));
        // A is symmetric positive definite.
        prop_assert!((&piece.a - piece.a.transpose()).amax() == 0.0);
        prop_assert!(piece.a.clone().cholesky().is_some());
    }

    #[test]
    fn scaling_the_premultiplier_leaves_p_unchanged(seed in any::<u64>(), scale in 0.001f64..1000.0) {
        let (ctx, _, st) = setup(seed, 2);
        let piece = affine_piece(&ctx, &st, 0.05, &DVector::from_vec(vec![0.2, 0.1])).unwrap();
        let mut scaled = piece.clone();
        scaled.a *= scale;
        let a = l_test_with_piece(&ctx, &st, &piece, 99, seed).unwrap();
        let b = l_test_with_piece(&ctx, &st, &scaled, 99, seed).unwrap();
        prop_assert_eq!(a.meta.ge_count, b.meta.ge_count);
        prop_assert!(a.p_value >= 1.0 / 100.0 && a.p_value <= 1.0);
    }
}

#[test]
fn vanishing_radius_matches_limit_branch() {
    let (ctx, _, st) = setup(31, 3);
    let lambda = 0.05;
    let dir = DVector::from_vec(vec![0.6, -0.8, 0.0]);
    let limit = affine_piece(&ctx, &st, lambda, &(&dir * 1e-12)).unwrap();
    assert!(limit.limit_branch && limit.grad_inv.is_none());
    let w = ctx.x1t_v1();
    let expect = w.transpose() * w * (st.sigma_hat / (ctx.n() as f64 * lambda));
    assert!((&limit.a - &expect).amax() <= 1e-12 * expect.amax());
    let r = 1e-7;
    let near = affine_piece(&ctx, &st, lambda, &(&dir * r)).unwrap();
    assert!(!near.limit_branch);
    assert!((&near.a / r - &limit.a).amax() <= 1e-4 * limit.a.amax());
    assert!((&near.nu - &limit.nu).amax() <= 1e-5);
    // The L p-value is therefore continuous in the radius.
    let a = l_test_with_piece(&ctx, &st, &limit, 499, 3).unwrap();
    let b = l_test_with_piece(&ctx, &st, &near, 499, 3).unwrap();
    assert!((a.p_value - b.p_value).abs() <= 2.0 / 500.0);
}

#[test]
fn gradient_at_the_origin_uses_the_limit() {
    let (ctx, _, st) = setup(32, 2);
    let lambda = 0.1;
    let g = grad_f_inverse(&ctx, &st, lambda, &DVector::zeros(2), 1e-6).unwrap();
    let x1 = ctx.design().tested().into_owned();
    let fit = conditional_lasso(&ctx, &st.reconstruct(&ctx, &st.u), &DVector::zeros(2), lambda).unwrap();
    assert!(g.iter().all(|v| v.is_finite()));
    let active: Vec<usize> = fit.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, _)| j + 2).collect();
    // Independent: X1^T (I - P_A) X1 via an explicit projection.
    let mut core = x1.transpose() * &x1;
    if !active.is_empty() {
        let xa = DMatrix::from_fn(ctx.n(), active.len(), |i, j| ctx.x()[(i, active[j])]);
        let proj = &xa * (xa.transpose() * &xa).try_inverse().unwrap() * xa.transpose();
        core -= x1.transpose() * proj * &x1;
    }
    core += DMatrix::identity(2, 2) * (ctx.n() as f64 * lambda / 1e-6);
    let expect = ctx.x1t_v1_inv() * core / st.sigma_hat;
    assert!((&g - &expect).amax() <= 1e-9 * expect.amax());
}

#[test]
fn empty_active_set_gradient() {
    let (ctx, y, st) = setup(33, 3);
    // Large penalty: every nuisance coefficient is zero.
    let lambda = ltest_core::solver::lambda_max(&ctx, &ctx.xt_mul(&y)) * 2.0;
    let b = DVector::from_vec(vec![0.1, 0.2, -0.1]);
    let piece = affine_piece(&ctx, &st, lambda, &b).unwrap();
    assert!(piece.active_set.is_empty());
    let x1 = ctx.design().tested().into_owned();
    let core = x1.transpose() * &x1 + DMatrix::identity(3, 3) * (ctx.n() as f64 * lambda / b.norm());
    let w = ctx.x1t_v1();
    let a = w.transpose() * core.try_inverse().unwrap() * w * st.sigma_hat;
    assert!((&piece.a - &a).amax() <= 1e-10 * a.amax());
    let nu = -(ctx.x1t_v1_inv() * ctx.tested_t_mul(&st.yhat)) / st.sigma_hat;
    assert!((&piece.nu - &nu).amax() <= 1e-10);
}

#[test]
fn large_radius_with_full_nuisance_reduces_to_f() {
    // Tiny penalty: all nuisance columns active, so X1^T (I - P_A) X1 = W W^T
    // and A -> sigma_hat I as the radius grows.
    let (ctx, _, st) = orthogonal_instance(34, 60, 8, 3);
    let b = DVector::from_vec(vec![1e6, 0.0, 0.0]);
    let piece = affine_piece(&ctx, &st, 1e-9, &b).unwrap();
    assert_eq!(piece.active_set.len(), 5);
    let expect = DMatrix::identity(3, 3) * st.sigma_hat;
    assert!((&piece.a - &expect).amax() <= 1e-8 * st.sigma_hat);
}

#[test]
fn orthogonal_blocks_give_zero_center_and_f_p_value() {
    let (ctx, y, st) = orthogonal_instance(35, 50, 12, 4);
    let piece = affine_piece(&ctx, &st, 0.05, &DVector::from_vec(vec![0.2, 0.0, 0.1, -0.3])).unwrap();
    assert!(piece.nu.amax() <= 1e-12);
    let mf = mcfree_test_with_piece(&ctx, &st, &piece).unwrap();
    assert_eq!(mf.meta.branch.as_deref(), Some("beta"));
    assert!((mf.p_value - f_test(&ctx, &y).unwrap().p_value).abs() <= 1e-10);
}

#[test]
fn k1_orthogonal_closed_form() {
    let (ctx, _, st) = orthogonal_instance(36, 40, 6, 1);
    let norm = ctx.design().tested().column(0).norm();
    let n = ctx.n() as f64;
    for &(b, lambda) in &[(0.7, 0.05), (-0.3, 0.2), (1e-3, 0.01)] {
        let u = f_inverse(&ctx, &st, lambda, &DVector::from_element(1, b)).unwrap();
        let expect = (norm * norm * b + n * lambda * f64::signum(b)) / (st.sigma_hat * norm);
        assert!((u[0] - expect).abs() <= 1e-9 * expect.abs().max(1.0));
    }
}

#[test]
fn l_test_is_valid_for_a_fixed_piece() {
    let (ctx, _, st) = setup(37, 3);
    let piece = affine_piece(&ctx, &st, 0.05, &DVector::from_vec(vec![0.3, 0.1, 0.0])).unwrap();
    let dim = ctx.basis().dim();
    let mut r = rng(8);
    let reps = 600;
    let mut rejections = 0;
    for i in 0..reps {
        let u = sample_sphere_head(dim, 3, &mut r);
        let mut s = st.clone();
        s.u.rows_mut(0, 3).copy_from(&u);
        let out = l_test_with_piece(&ctx, &s, &piece, 99, i).unwrap();
        if out.p_value <= 0.1 {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / reps as f64;
    let se = (0.1f64 * 0.9 / reps as f64).sqrt();
    assert!((rate - 0.1).abs() <= 3.0 * se, "rate {rate}");
}

#[test]
fn glasso_mc_is_deterministic_across_thread_counts() {
    let (ctx, _, st) = setup(38, 3);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| glasso_mc_test_with_state(&ctx, &st, 0.05, 60, 9).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a, b);
    assert_eq!(a, run(1));
    assert!(a.p_value >= 1.0 / 61.0);
    let l = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(|| {
        let piece = affine_piece(&ctx, &st, 0.05, &DVector::from_vec(vec![0.1, 0.0, 0.2])).unwrap();
        l_test_with_piece(&ctx, &st, &piece, 200, 4).unwrap()
    });
    let piece = affine_piece(&ctx, &st, 0.05, &DVector::from_vec(vec![0.1, 0.0, 0.2])).unwrap();
    assert_eq!(l, l_test_with_piece(&ctx, &st, &piece, 200, 4).unwrap());
}

#[test]
fn phi_is_the_unrecentered_statistic() {
    let (ctx, _, st) = setup(39, 2);
    let piece = affine_piece(&ctx, &st, 0.05, &DVector::from_vec(vec![0.2, 0.1])).unwrap();
    let mut centered = piece.clone();
    centered.nu = DVector::zeros(2);
    let u = st.u_head(2);
    assert_eq!(phi_statistic(&piece, &u), l_statistic(&centered, &u));
    let a = phi_test_with_piece(&ctx, &st, &piece, 99, 1).unwrap();
    let mut b = l_test_with_piece(&ctx, &st, &centered, 99, 1).unwrap();
    b.method = a.method;
    assert_eq!(a.p_value, b.p_value);
}
