use criterion::{criterion_group, criterion_main, Criterion};
use ltest_bench::fixture;
use ltest_core::ltest::{affine_piece, glasso_mc_test_with_state, l_test_with_piece};
use ltest_core::mcfree::RecenteredLaw;
use ltest_core::solver::{group_lasso, lambda_max, tune_with, CvOptions};

fn solver(c: &mut Criterion) {
    let f = fixture(1);
    let lambda = 0.1 * lambda_max(&f.ctx, &f.ctx.xt_mul(&f.y));
    c.bench_function("group_lasso n100 d50 k10", |b| {
        b.iter(|| group_lasso(&f.ctx, &f.y, lambda).unwrap())
    });
    let opts = CvOptions::default();
    let mut g = c.benchmark_group("tuning");
    g.sample_size(10);
    g.bench_function("10-fold cv, 100 lambdas", |b| {
        b.iter(|| tune_with(&f.ctx, &f.state, 3, &opts, 1).unwrap())
    });
    g.finish();
}

fn tests(c: &mut Criterion) {
    let f = fixture(2);
    let tuning = tune_with(&f.ctx, &f.state, 3, &CvOptions::default(), 1).unwrap();
    c.bench_function("affine piece", |b| {
        b.iter(|| affine_piece(&f.ctx, &f.state, tuning.lambda, &tuning.b_star()).unwrap())
    });
    let piece = affine_piece(&f.ctx, &f.state, tuning.lambda, &tuning.b_star()).unwrap();
    c.bench_function("l-test M=200", |b| {
        b.iter(|| l_test_with_piece(&f.ctx, &f.state, &piece, 200, 5).unwrap())
    });
    let mut g = c.benchmark_group("glasso-mc");
    g.sample_size(10);
    g.bench_function("M=200", |b| {
        b.iter(|| glasso_mc_test_with_state(&f.ctx, &f.state, tuning.lambda, 200, 5).unwrap())
    });
    g.finish();
}

fn mcfree(c: &mut Criterion) {
    let law = RecenteredLaw::new(0.6, 10, 50).unwrap();
    c.bench_function("mcfree survival k10 df50", |b| b.iter(|| law.survival(0.7).unwrap()));
}

criterion_group!(benches, solver, tests, mcfree);
criterion_main!(benches);
