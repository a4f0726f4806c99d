//! Scenario generation and the simulation harness: AR(1) designs, sparse
//! coefficient patterns, model-violation error generators, the PC and phi
//! baselines, power sweeps and the tuning-variance experiment.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classic::{f_test, oracle_test};
use crate::error::{Error, Result};
use crate::ltest::{affine_piece, glasso_mc_test_with_state, l_test_with_piece, phi_test_with_piece, sample_rng};
use crate::mcfree::mcfree_test_with_piece;
use crate::model::{sufficient_state, Design, ModelContext, SufficientState};
use crate::outcome::{Method, TestOutcome};
use crate::solver::{tune_with, CvOptions, TuningChoice};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Violation {
    None,
    /// Student t errors with `nu` degrees of freedom, standardized when `nu > 2`.
    TErrors { nu: f64 },
    /// Standardized Gamma(shape, scale 1) errors.
    GammaErrors { shape: f64 },
    /// `N(0, 1)` when the row mean of `X` is `<= 0`, else `N(0, eta2)`.
    Heteroskedastic { eta2: f64 },
    /// Response generated from `sign(X) |X|^delta`; tests see `X`.
    Nonlinear { delta: f64 },
}

impl Default for Violation {
    fn default() -> Self {
        Violation::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaPattern {
    #[default]
    RandomSigns,
    DenseAlternating,
    DenseNonnegative,
}

/// Column scaling applied after centering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnScale {
    /// `||x_j||^2 = n`.
    #[default]
    UnitVariance,
    /// `||x_j|| = 1`.
    UnitNorm,
}

impl ColumnScale {
    pub fn target_norm(self, n: usize) -> f64 {
        match self {
            ColumnScale::UnitVariance => (n as f64).sqrt(),
            ColumnScale::UnitNorm => 1.0,
        }
    }
}

fn default_n() -> usize {
    100
}
fn default_d() -> usize {
    50
}
fn default_k() -> usize {
    10
}
fn default_k2() -> usize {
    4
}
fn default_reps() -> usize {
    300
}
fn default_alpha() -> f64 {
    0.05
}
fn default_mc() -> usize {
    200
}
fn default_seed() -> u64 {
    1
}
fn default_folds() -> usize {
    10
}
fn default_one() -> usize {
    1
}

/// One simulation regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub amp: f64,
    #[serde(default)]
    pub k1: usize,
    #[serde(default = "default_k2")]
    pub k2: usize,
    #[serde(default)]
    pub rho: f64,
    #[serde(default)]
    pub violation: Violation,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_mc", alias = "M")]
    pub mc_samples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub block_orthogonal: bool,
    #[serde(default)]
    pub beta_pattern: BetaPattern,
    #[serde(default)]
    pub column_scale: ColumnScale,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
    #[serde(default = "default_one")]
    pub tuning_repeats: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: None,
            n: default_n(),
            d: default_d(),
            k: default_k(),
            amp: 0.0,
            k1: 0,
            k2: default_k2(),
            rho: 0.0,
            violation: Violation::None,
            reps: default_reps(),
            alpha: default_alpha(),
            mc_samples: default_mc(),
            seed: default_seed(),
            block_orthogonal: false,
            beta_pattern: BetaPattern::RandomSigns,
            column_scale: ColumnScale::UnitVariance,
            cv_folds: default_folds(),
            tuning_repeats: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.k == 0 || self.k > self.d {
            return Err(Error::BadGroupSize { k: self.k, d: self.d });
        }
        if self.n <= self.d {
            return Err(Error::TooFewRows { n: self.n, d: self.d });
        }
        if self.k1 > self.k {
            return bad(format!("k1 = {} exceeds k = {}", self.k1, self.k));
        }
        if self.k2 > self.d - self.k {
            return bad(format!("k2 = {} exceeds d - k = {}", self.k2, self.d - self.k));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho = {} must lie in [0, 1)", self.rho));
        }
        if self.reps == 0 || self.mc_samples == 0 || self.tuning_repeats == 0 {
            return bad("reps, mc_samples and tuning_repeats must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::BadLevel(self.alpha));
        }
        if self.cv_folds < 2 || self.cv_folds > self.n {
            return bad(format!("cv_folds = {} must lie in [2, n]", self.cv_folds));
        }
        if !self.amp.is_finite() {
            return bad("amp must be finite".into());
        }
        match self.violation {
            Violation::TErrors { nu } if !(nu > 0.0) => bad(format!("t degrees of freedom {nu} must be positive")),
            Violation::GammaErrors { shape } if !(shape > 0.0) => bad(format!("gamma shape {shape} must be positive")),
            Violation::Heteroskedastic { eta2 } if !(eta2 > 0.0) => bad(format!("eta2 {eta2} must be positive")),
            Violation::Nonlinear { delta } if !(delta > 0.0) => bad(format!("delta {delta} must be positive")),
            _ => Ok(()),
        }
    }

    /// Label used in result tables.
    pub fn id(&self) -> String {
        match &self.name {
            Some(name) => name.clone(),
            None => format!(
                "n{}-d{}-k{}-A{}-k1_{}-k2_{}-rho{}",
                self.n, self.d, self.k, self.amp, self.k1, self.k2, self.rho
            ),
        }
    }
}

/// Mixes `seed` and `tag` into an independent seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Centers every column and rescales it to the configured norm.
pub fn standardize_columns(x: &mut DMatrix<f64>, scale: ColumnScale) {
    let target = scale.target_norm(x.nrows());
    for mut col in x.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let norm = col.norm();
        if norm > 0.0 {
            col *= target / norm;
        }
    }
}

fn ar1_matrix<R: Rng + ?Sized>(n: usize, d: usize, rho: f64, rng: &mut R) -> DMatrix<f64> {
    let innov = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::<f64>::zeros(n, d);
    for i in 0..n {
        let mut prev: f64 = rng.sample(StandardNormal);
        x[(i, 0)] = prev;
        for j in 1..d {
            let z: f64 = rng.sample(StandardNormal);
            prev = rho * prev + innov * z;
            x[(i, j)] = prev;
        }
    }
    x
}

/// Draws an AR(1) design with standardized columns. With `block_orthogonal`
/// the nuisance columns are first replaced by their residuals on `X_{1:k}`.
/// Retries up to three times if the draw is numerically rank deficient.
pub fn gen_design<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Design> {
    cfg.validate()?;
    let mut last = Error::RankDeficient { ratio: 0.0 };
    for _ in 0..4 {
        let mut x = ar1_matrix(cfg.n, cfg.d, cfg.rho, rng);
        standardize_columns(&mut x, cfg.column_scale);
        if cfg.block_orthogonal {
            orthogonalize_blocks(&mut x, cfg.k);
            standardize_columns(&mut x, cfg.column_scale);
        }
        match crate::model::build_model(x, cfg.k) {
            Ok(ctx) => return Ok(ctx.design().clone()),
            Err(e @ Error::RankDeficient { .. }) => last = e,
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// Replaces `X_{-1:k}` by `(I - P_{1:k}) X_{-1:k}`.
pub fn orthogonalize_blocks(x: &mut DMatrix<f64>, k: usize) {
    let d = x.ncols();
    if k == d {
        return;
    }
    let q = x.columns(0, k).into_owned().qr().q();
    let mut rest = x.columns(k, d - k).into_owned();
    rest -= &q * (q.transpose() * &rest);
    x.columns_mut(k, d - k).copy_from(&rest);
}

/// Coefficients: `k1` tested entries of magnitude `amp / sqrt(k1)` and `k2`
/// standard Gaussian nuisance entries at random positions.
pub fn gen_beta<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> DVector<f64> {
    let (d, k) = (cfg.d, cfg.k);
    let mut beta = DVector::zeros(d);
    if cfg.k1 > 0 {
        let mag = cfg.amp / (cfg.k1 as f64).sqrt();
        match cfg.beta_pattern {
            BetaPattern::RandomSigns => {
                for j in sample_indices(rng, k, cfg.k1).into_iter() {
                    beta[j] = if rng.random::<bool>() { mag } else { -mag };
                }
            }
            BetaPattern::DenseAlternating => {
                for j in 0..cfg.k1 {
                    beta[j] = if j % 2 == 0 { mag } else { -mag };
                }
            }
            BetaPattern::DenseNonnegative => {
                for j in 0..cfg.k1 {
                    beta[j] = mag;
                }
            }
        }
    }
    if cfg.k2 > 0 {
        for j in sample_indices(rng, d - k, cfg.k2).into_iter() {
            beta[k + j] = rng.sample(StandardNormal);
        }
    }
    beta
}

/// Error vector for the configured violation. The nonlinear violation only
/// affects the design used for the response, so it returns Gaussian errors.
pub fn gen_errors<R: Rng + ?Sized>(cfg: &ScenarioConfig, x: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    let n = x.nrows();
    let e = match cfg.violation {
        Violation::None | Violation::Nonlinear { .. } => DVector::from_fn(n, |_, _| rng.sample(StandardNormal)),
        Violation::TErrors { nu } => {
            let dist = StudentT::new(nu).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let scale = if nu > 2.0 { ((nu - 2.0) / nu).sqrt() } else { 1.0 };
            DVector::from_fn(n, |_, _| dist.sample(rng) * scale)
        }
        Violation::GammaErrors { shape } => {
            let dist = Gamma::new(shape, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let sd = shape.sqrt();
            DVector::from_fn(n, |_, _| (dist.sample(rng) - shape) / sd)
        }
        Violation::Heteroskedastic { eta2 } => {
            let sd = eta2.sqrt();
            DVector::from_fn(n, |i, _| {
                let z: f64 = rng.sample(StandardNormal);
                if x.row(i).mean() <= 0.0 {
                    z
                } else {
                    z * sd
                }
            })
        }
    };
    Ok(e)
}

/// `sign(x) |x|^delta` elementwise.
pub fn power_transform(x: &DMatrix<f64>, delta: f64) -> DMatrix<f64> {
    x.map(|v| v.signum() * v.abs().powf(delta))
}

/// One simulated dataset.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub ctx: ModelContext,
    pub y: DVector<f64>,
    pub beta: DVector<f64>,
}

/// Draws design, coefficients and response for one replication.
pub fn gen_replicate<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Replicate> {
    let design = gen_design(cfg, rng)?;
    let beta = gen_beta(cfg, rng);
    let x = design.x();
    let errors = gen_errors(cfg, x, rng)?;
    let signal = match cfg.violation {
        Violation::Nonlinear { delta } => power_transform(x, delta) * &beta,
        _ => x * &beta,
    };
    let y = signal + errors;
    let ctx = ModelContext::new(design)?;
    Ok(Replicate { ctx, y, beta })
}

/// PC-test: F-test on the leading right singular directions of `X_{1:k}`
/// that explain at least `var_threshold` of its squared singular values.
pub fn pc_test(ctx: &ModelContext, y: &DVector<f64>, var_threshold: f64) -> Result<TestOutcome> {
    if !(var_threshold > 0.0 && var_threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!("variance threshold {var_threshold} must lie in (0, 1]")));
    }
    let (k, d) = (ctx.k(), ctx.d());
    let x1 = ctx.design().tested().into_owned();
    let svd = x1.clone().svd(false, true);
    let v_t = svd.v_t.ok_or(Error::RankDeficient { ratio: 0.0 })?;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let energy: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].powi(2)).collect();
    let total: f64 = energy.iter().sum();
    let mut acc = 0.0;
    let mut r = k;
    for (i, e) in energy.iter().enumerate() {
        acc += e;
        if acc >= var_threshold * total * (1.0 - 1e-12) {
            r = i + 1;
            break;
        }
    }
    let w = DMatrix::from_fn(k, r, |row, col| v_t[(order[col], row)]);
    let mut x = DMatrix::zeros(ctx.n(), d - k + r);
    x.columns_mut(0, r).copy_from(&(&x1 * w));
    x.columns_mut(r, d - k).copy_from(&ctx.design().nuisance());
    let reduced = crate::model::build_model(x, r)?;
    let mut out = f_test(&reduced, y)?;
    out.method = Method::Pc;
    out.meta.retained_components = Some(r);
    Ok(out)
}

/// phi-test: MC p-value of `||A u_{1:k}||` at the tuned `(lambda, b*)`.
pub fn phi_test<R: Rng + ?Sized>(
    ctx: &ModelContext,
    y: &DVector<f64>,
    tuning: &TuningChoice,
    mc_samples: usize,
    rng: &mut R,
) -> Result<TestOutcome> {
    let state = sufficient_state(ctx, y)?;
    let piece = affine_piece(ctx, &state, tuning.lambda, &tuning.b_star())?;
    let mut out = phi_test_with_piece(ctx, &state, &piece, mc_samples, rng.random())?;
    out.meta.b_star = Some(tuning.b_star.clone());
    out.meta.tuning_seed = Some(tuning.tuning_seed);
    Ok(out)
}

/// Rejection rate of one method in one scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRecord {
    pub scenario: String,
    pub method: Method,
    pub reps: usize,
    pub rejections: usize,
    pub failures: usize,
    pub rejection_rate: f64,
    pub standard_error: f64,
    /// Summed seconds spent in this method; only filled when timing is on.
    #[serde(skip)]
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SweepOptions {
    pub record_timing: bool,
}

/// Seeds for everything random in one replication.
#[derive(Debug, Clone, Copy)]
pub struct ReplicateSeeds {
    pub data: u64,
    pub tuning: u64,
    pub mc: u64,
}

impl ReplicateSeeds {
    pub fn new(scenario_seed: u64, rep: usize) -> Self {
        let base = derive_seed(scenario_seed, rep as u64);
        Self {
            data: derive_seed(base, 1),
            tuning: derive_seed(base, 2),
            mc: derive_seed(base, 3),
        }
    }

    /// MC seed for one method, so results do not depend on which other
    /// methods run alongside.
    pub fn mc_for(&self, method: Method) -> u64 {
        derive_seed(self.mc, method as u64 + 1)
    }
}

/// Lazily computed per-replication quantities shared by several methods.
pub struct ReplicateRun<'a> {
    pub cfg: &'a ScenarioConfig,
    pub rep: &'a Replicate,
    pub seeds: ReplicateSeeds,
    state: Option<SufficientState>,
    tuning: Option<TuningChoice>,
    piece: Option<crate::ltest::AffinePiece>,
}

impl<'a> ReplicateRun<'a> {
    pub fn new(cfg: &'a ScenarioConfig, rep: &'a Replicate, seeds: ReplicateSeeds) -> Self {
        Self {
            cfg,
            rep,
            seeds,
            state: None,
            tuning: None,
            piece: None,
        }
    }

    pub fn state(&mut self) -> Result<&SufficientState> {
        if self.state.is_none() {
            self.state = Some(sufficient_state(&self.rep.ctx, &self.rep.y)?);
        }
        Ok(self.state.as_ref().unwrap())
    }

    pub fn tuning(&mut self) -> Result<&TuningChoice> {
        if self.tuning.is_none() {
            let opts = CvOptions {
                folds: self.cfg.cv_folds,
                ..CvOptions::default()
            };
            let seed = self.seeds.tuning;
            let repeats = self.cfg.tuning_repeats;
            self.state()?;
            let state = self.state.as_ref().unwrap();
            self.tuning = Some(tune_with(&self.rep.ctx, state, seed, &opts, repeats)?);
        }
        Ok(self.tuning.as_ref().unwrap())
    }

    pub fn piece(&mut self) -> Result<&crate::ltest::AffinePiece> {
        if self.piece.is_none() {
            self.tuning()?;
            let tuning = self.tuning.as_ref().unwrap();
            let state = self.state.as_ref().unwrap();
            self.piece = Some(affine_piece(&self.rep.ctx, state, tuning.lambda, &tuning.b_star())?);
        }
        Ok(self.piece.as_ref().unwrap())
    }

    /// Runs one method on this replication.
    pub fn run(&mut self, method: Method) -> Result<TestOutcome> {
        let ctx = &self.rep.ctx;
        let m = self.cfg.mc_samples;
        let mc_seed = self.seeds.mc_for(method);
        match method {
            Method::F => f_test(ctx, &self.rep.y),
            Method::Oracle => oracle_test(ctx, &self.rep.y, &self.rep.beta),
            Method::Pc => pc_test(ctx, &self.rep.y, 0.85),
            Method::L => {
                self.piece()?;
                l_test_with_piece(ctx, self.state.as_ref().unwrap(), self.piece.as_ref().unwrap(), m, mc_seed)
            }
            Method::Phi => {
                self.piece()?;
                phi_test_with_piece(ctx, self.state.as_ref().unwrap(), self.piece.as_ref().unwrap(), m, mc_seed)
            }
            Method::Mcfree => {
                self.piece()?;
                mcfree_test_with_piece(ctx, self.state.as_ref().unwrap(), self.piece.as_ref().unwrap())
            }
            Method::GlassoMc => {
                let lambda = self.tuning()?.lambda;
                glasso_mc_test_with_state(ctx, self.state.as_ref().unwrap(), lambda, m, mc_seed)
            }
        }
    }
}

/// Per-replication result for each method: `Some(rejected)` or `None` on failure.
fn run_replicate(
    cfg: &ScenarioConfig,
    scenario_seed: u64,
    rep_index: usize,
    methods: &[Method],
    timing: bool,
) -> Vec<(Option<bool>, f64)> {
    let seeds = ReplicateSeeds::new(scenario_seed, rep_index);
    let mut rng = sample_rng(seeds.data, 0);
    let rep = match gen_replicate(cfg, &mut rng) {
        Ok(rep) => rep,
        Err(_) => return vec![(None, 0.0); methods.len()],
    };
    let mut run = ReplicateRun::new(cfg, &rep, seeds);
    methods
        .iter()
        .map(|&method| {
            let start = timing.then(Instant::now);
            let res = run.run(method).ok().map(|o| o.rejects(cfg.alpha));
            (res, start.map_or(0.0, |s| s.elapsed().as_secs_f64()))
        })
        .collect()
}

/// Rejection rates of `methods` in one scenario, replications in parallel.
pub fn run_scenario(cfg: &ScenarioConfig, methods: &[Method], opts: SweepOptions) -> Result<Vec<PowerRecord>> {
    cfg.validate()?;
    let per_rep: Vec<Vec<(Option<bool>, f64)>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| run_replicate(cfg, cfg.seed, r, methods, opts.record_timing))
        .collect();
    let id = cfg.id();
    Ok(methods
        .iter()
        .enumerate()
        .map(|(mi, &method)| {
            let mut rejections = 0;
            let mut failures = 0;
            let mut seconds = 0.0;
            for rep in &per_rep {
                match rep[mi].0 {
                    Some(true) => rejections += 1,
                    Some(false) => {}
                    None => failures += 1,
                }
                seconds += rep[mi].1;
            }
            let done = cfg.reps - failures;
            let rate = if done > 0 { rejections as f64 / done as f64 } else { f64::NAN };
            let se = if done > 0 { (rate * (1.0 - rate) / done as f64).sqrt() } else { f64::NAN };
            PowerRecord {
                scenario: id.clone(),
                method,
                reps: cfg.reps,
                rejections,
                failures,
                rejection_rate: rate,
                standard_error: se,
                wall_time: opts.record_timing.then_some(seconds),
            }
        })
        .collect())
}

/// Runs every scenario in `grid` for every method.
pub fn run_power_sweep(grid: &[ScenarioConfig], methods: &[Method], opts: SweepOptions) -> Result<Vec<PowerRecord>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("scenario grid is empty".into()));
    }
    let mut out = Vec::new();
    for cfg in grid {
        out.extend(run_scenario(cfg, methods, opts)?);
    }
    Ok(out)
}

/// Overall and within-dataset spread of p-values `p[i][j]` (dataset `i`,
/// tuning draw `j`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceDecomposition {
    pub overall_sd: f64,
    pub within_sd: f64,
    pub ratio: f64,
    pub m_outer: usize,
    pub m_inner: usize,
}

pub fn variance_decomposition(p: &[Vec<f64>]) -> Result<VarianceDecomposition> {
    let m_outer = p.len();
    let m_inner = p.first().map_or(0, |r| r.len());
    if m_outer < 2 || m_inner < 2 || p.iter().any(|r| r.len() != m_inner) {
        return Err(Error::InvalidArgument("need a rectangular table with at least 2 x 2 entries".into()));
    }
    let total = (m_outer * m_inner) as f64;
    let grand = p.iter().flatten().sum::<f64>() / total;
    let overall_ss: f64 = p.iter().flatten().map(|v| (v - grand).powi(2)).sum();
    let within_ss: f64 = p
        .iter()
        .map(|row| {
            let mean = row.iter().sum::<f64>() / m_inner as f64;
            row.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
        })
        .sum();
    let overall_sd = (overall_ss / (total - 1.0)).sqrt();
    let within_sd = (within_ss / (m_outer as f64 * (m_inner as f64 - 1.0))).sqrt();
    Ok(VarianceDecomposition {
        overall_sd,
        within_sd,
        ratio: if overall_sd > 0.0 { within_sd / overall_sd } else { 0.0 },
        m_outer,
        m_inner,
    })
}

/// For `m_outer` datasets, recomputes the p-value of `method` (L or MC-free)
/// under `m_inner` independent tuning draws. The MC seed is held fixed per
/// dataset so the within spread isolates the tuning randomness.
pub fn tuning_variance_experiment(
    cfg: &ScenarioConfig,
    method: Method,
    m_outer: usize,
    m_inner: usize,
) -> Result<VarianceDecomposition> {
    cfg.validate()?;
    if !matches!(method, Method::L | Method::Mcfree | Method::Phi) {
        return Err(Error::InvalidArgument(format!("method {method} does not use tuning")));
    }
    if m_outer < 2 || m_inner < 2 {
        return Err(Error::InvalidArgument("m_outer and m_inner must be at least 2".into()));
    }
    let opts = CvOptions {
        folds: cfg.cv_folds,
        ..CvOptions::default()
    };
    let table: Result<Vec<Vec<f64>>> = (0..m_outer)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let seeds = ReplicateSeeds::new(cfg.seed, i);
            let mut rng: ChaCha8Rng = sample_rng(seeds.data, 0);
            let rep = gen_replicate(cfg, &mut rng)?;
            let state = sufficient_state(&rep.ctx, &rep.y)?;
            (0..m_inner)
                .map(|j| {
                    let tuning = tune_with(&rep.ctx, &state, derive_seed(seeds.tuning, j as u64), &opts, cfg.tuning_repeats)?;
                    let piece = affine_piece(&rep.ctx, &state, tuning.lambda, &tuning.b_star())?;
                    let out = match method {
                        Method::L => l_test_with_piece(&rep.ctx, &state, &piece, cfg.mc_samples, seeds.mc_for(method))?,
                        Method::Phi => phi_test_with_piece(&rep.ctx, &state, &piece, cfg.mc_samples, seeds.mc_for(method))?,
                        _ => mcfree_test_with_piece(&rep.ctx, &state, &piece)?,
                    };
                    Ok(out.p_value)
                })
                .collect()
        })
        .collect();
    variance_decomposition(&table?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn config_defaults_and_validation() {
        let cfg = ScenarioConfig::default();
        assert!(cfg.validate().is_ok());
        let bad = ScenarioConfig { k1: 11, ..ScenarioConfig::default() };
        assert!(bad.validate().is_err());
        let bad = ScenarioConfig { rho: 1.0, ..ScenarioConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn standardized_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for scale in [ColumnScale::UnitVariance, ColumnScale::UnitNorm] {
            let cfg = ScenarioConfig { n: 60, d: 20, k: 5, rho: 0.5, column_scale: scale, ..ScenarioConfig::default() };
            let design = gen_design(&cfg, &mut rng).unwrap();
            for col in design.x().column_iter() {
                assert!(col.mean().abs() < 1e-12);
                assert!((col.norm() - scale.target_norm(60)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn block_orthogonal_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = ScenarioConfig { n: 60, d: 20, k: 5, rho: 0.9, block_orthogonal: true, ..ScenarioConfig::default() };
        let design = gen_design(&cfg, &mut rng).unwrap();
        let cross = design.tested().transpose() * design.nuisance();
        assert!(cross.amax() < 1e-8);
    }

    #[test]
    fn beta_patterns() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = ScenarioConfig { k1: 10, amp: 0.4, ..ScenarioConfig::default() };
        let beta = gen_beta(&cfg, &mut rng);
        assert!((beta.rows(0, 10).norm() - 0.4).abs() < 1e-12);
        assert_eq!(beta.iter().skip(10).filter(|v| **v != 0.0).count(), 4);
        let cfg = ScenarioConfig { k1: 4, amp: 1.0, beta_pattern: BetaPattern::DenseAlternating, ..ScenarioConfig::default() };
        let beta = gen_beta(&cfg, &mut rng);
        assert_eq!(&beta.as_slice()[..4], &[0.5, -0.5, 0.5, -0.5]);
        let cfg = ScenarioConfig { k1: 0, k2: 0, ..ScenarioConfig::default() };
        assert!(gen_beta(&cfg, &mut rng).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_rows_have_zero_within_spread() {
        let table = vec![vec![0.2; 4], vec![0.7; 4], vec![0.4; 4]];
        let dec = variance_decomposition(&table).unwrap();
        assert_eq!(dec.within_sd, 0.0);
        assert!(dec.overall_sd > 0.0);
    }

    #[test]
    fn seeds_are_distinct() {
        let a = ReplicateSeeds::new(1, 0);
        let b = ReplicateSeeds::new(1, 1);
        assert_ne!(a.data, b.data);
        assert_ne!(a.mc_for(Method::L), a.mc_for(Method::Phi));
    }
}
