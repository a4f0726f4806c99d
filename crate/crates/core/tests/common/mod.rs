#![allow(dead_code)]

use ltest_core::model::{build_model, ModelContext};
use ltest_core::simlab::{gen_replicate, Replicate, ScenarioConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Gaussian design and a response with a few nonzero coefficients in both blocks.
pub fn sparse_instance(n: usize, d: usize, k: usize, signal: f64, seed: u64) -> (ModelContext, DVector<f64>, DVector<f64>) {
    let mut r = rng(seed);
    let x = gaussian_matrix(n, d, &mut r);
    let mut beta = DVector::zeros(d);
    for j in 0..k.min(3) {
        beta[j] = signal * if j % 2 == 0 { 1.0 } else { -0.7 };
    }
    for j in (k..d).step_by(((d - k) / 3).max(1)).take(3) {
        beta[j] = 1.0;
    }
    let y = &x * &beta + gaussian_vector(n, &mut r);
    (build_model(x, k).unwrap(), y, beta)
}

/// Replicate from the standard simulation regime with the given overrides.
pub fn scenario_replicate(cfg: &ScenarioConfig, seed: u64) -> Replicate {
    gen_replicate(cfg, &mut rng(seed)).unwrap()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Two-sided Kolmogorov-Smirnov distance between a sample and a CDF.
pub fn ks_distance(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let m = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
        })
        .fold(0.0, f64::max)
}
