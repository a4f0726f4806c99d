#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn ltest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltest"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

/// CSV with columns x1..x{d} and y, where y depends on x1, x2 and x{d}.
pub fn write_dataset(dir: &Path, n: usize, d: usize, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = (1..=d).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",");
    text.push_str(",y\n");
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let noise: f64 = rng.sample(StandardNormal);
        let y = 0.4 * x[0] - 0.3 * x[1] + x[d - 1] + noise;
        let row: Vec<String> = x.iter().chain(std::iter::once(&y)).map(|v| format!("{v:.6}")).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    let path = dir.join("data.csv");
    std::fs::write(&path, text).unwrap();
    path
}
