//! `ltest test`: run one or more tests on every named group of a dataset.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use ltest_core::classic::f_test;
use ltest_core::ltest::{affine_piece, glasso_mc_test_with_state, l_test_with_piece, phi_test_with_piece};
use ltest_core::mcfree::mcfree_test_with_piece;
use ltest_core::simlab::{pc_test, ReplicateSeeds};
use ltest_core::solver::{tune_with, CvOptions};
use ltest_core::{sufficient_state, Method, OutcomeMeta, TestOutcome, TuningChoice};
use nalgebra::DVector;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::ingest::{ingest, read_table, DatasetSpec, GroupDesign, GroupSpec};
use crate::OutputFormat;

/// Share of `X_{1:k}` energy retained by the PC baseline.
pub const PC_THRESHOLD: f64 = 0.85;

#[derive(Debug, Clone, clap::Args)]
pub struct TestArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Response column.
    #[arg(long)]
    pub response: String,
    /// Tested group as name=col1,col2 (repeatable).
    #[arg(long = "group", required = true)]
    pub groups: Vec<GroupSpec>,
    /// Tests to run: f, l, mcfree, glasso-mc, pc, phi (comma separated or repeated).
    #[arg(long = "method", value_delimiter = ',', default_value = "l")]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 200)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub cv_folds: usize,
    #[arg(long, default_value_t = 1)]
    pub tuning_repeats: usize,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub out: OutputFormat,
    /// Add a constant column to the nuisance block.
    #[arg(long)]
    pub intercept: bool,
    /// Center covariates and scale them to unit Euclidean norm.
    #[arg(long)]
    pub standardize: bool,
    /// Include wall-clock seconds per test (output is then not reproducible).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    schema: u32,
    command: &'static str,
    data: String,
    response: &'a str,
    n: usize,
    alpha: f64,
    seed: u64,
    results: Vec<Row>,
}

#[derive(Debug, Serialize)]
struct Row {
    group: String,
    columns: Vec<String>,
    k: usize,
    d: usize,
    method: Method,
    statistic: f64,
    p_value: f64,
    reject: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    mc_samples: Option<usize>,
    #[serde(flatten)]
    meta: OutcomeMeta,
    #[serde(skip_serializing_if = "Option::is_none")]
    seconds: Option<f64>,
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    group: &'a str,
    k: usize,
    d: usize,
    method: Method,
    statistic: f64,
    p_value: f64,
    reject: bool,
    mc_samples: Option<usize>,
    lambda: Option<f64>,
    tuning_seed: Option<u64>,
    mc_seed: Option<u64>,
    branch: Option<&'a str>,
    seconds: Option<f64>,
}

fn validate(args: &TestArgs) -> CliResult<()> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::usage(format!("--alpha {} must lie strictly between 0 and 1", args.alpha)));
    }
    if args.methods.contains(&Method::Oracle) {
        return Err(CliError::usage("the oracle test needs the true coefficients and is only available in simulations"));
    }
    if args.mc_samples == 0 || args.tuning_repeats == 0 {
        return Err(CliError::usage("--mc-samples and --tuning-repeats must be positive"));
    }
    if args.cv_folds < 2 {
        return Err(CliError::usage("--cv-folds must be at least 2"));
    }
    Ok(())
}

/// Runs `methods` on one group. Tuning is shared by the methods that need it.
fn run_group(
    group: &GroupDesign,
    y: &DVector<f64>,
    index: usize,
    args: &TestArgs,
) -> CliResult<Vec<(TestOutcome, Option<f64>)>> {
    let ctx = &group.ctx;
    let seeds = ReplicateSeeds::new(args.seed, index);
    let state = sufficient_state(ctx, y)?;
    let mut tuning: Option<TuningChoice> = None;
    let mut out = Vec::with_capacity(args.methods.len());
    for &method in &args.methods {
        let start = Instant::now();
        if method.needs_tuning() && tuning.is_none() {
            let opts = CvOptions {
                folds: args.cv_folds.min(ctx.n()),
                ..CvOptions::default()
            };
            tuning = Some(tune_with(ctx, &state, seeds.tuning, &opts, args.tuning_repeats)?);
        }
        let mc_seed = seeds.mc_for(method);
        let mut result = match method {
            Method::F => f_test(ctx, y)?,
            Method::Pc => pc_test(ctx, y, PC_THRESHOLD)?,
            Method::GlassoMc => {
                let t = tuning.as_ref().unwrap();
                glasso_mc_test_with_state(ctx, &state, t.lambda, args.mc_samples, mc_seed)?
            }
            Method::L | Method::Phi | Method::Mcfree => {
                let t = tuning.as_ref().unwrap();
                let piece = affine_piece(ctx, &state, t.lambda, &t.b_star())?;
                match method {
                    Method::L => l_test_with_piece(ctx, &state, &piece, args.mc_samples, mc_seed)?,
                    Method::Phi => phi_test_with_piece(ctx, &state, &piece, args.mc_samples, mc_seed)?,
                    _ => mcfree_test_with_piece(ctx, &state, &piece)?,
                }
            }
            Method::Oracle => unreachable!("rejected by validation"),
        };
        if let Some(t) = tuning.as_ref().filter(|_| method.needs_tuning()) {
            result.meta.lambda = Some(t.lambda);
            result.meta.b_star = Some(t.b_star.clone());
            result.meta.tuning_seed = Some(t.tuning_seed);
        }
        let seconds = args.timing.then(|| start.elapsed().as_secs_f64());
        out.push((result, seconds));
    }
    Ok(out)
}

pub fn run(args: &TestArgs, sink: &mut dyn Write) -> CliResult<()> {
    validate(args)?;
    let table = read_table(&args.data)?;
    let spec = DatasetSpec {
        response: args.response.clone(),
        groups: args.groups.clone(),
        standardize: args.standardize,
        intercept: args.intercept,
    };
    let (groups, y) = ingest(&table, &spec)?;
    let mut rows = Vec::new();
    for (gi, group) in groups.iter().enumerate() {
        let results = run_group(group, &y, gi, args).map_err(|e| e.context(&format!("group '{}'", group.name)))?;
        for (outcome, seconds) in results {
            rows.push(Row {
                group: group.name.clone(),
                columns: group.columns.clone(),
                k: group.ctx.k(),
                d: group.ctx.d(),
                method: outcome.method,
                statistic: outcome.statistic,
                reject: outcome.rejects(args.alpha),
                p_value: outcome.p_value,
                mc_samples: outcome.mc_samples,
                meta: outcome.meta,
                seconds,
            });
        }
    }
    match args.out {
        OutputFormat::Json => {
            let report = Report {
                schema: crate::SCHEMA,
                command: "test",
                data: args.data.display().to_string(),
                response: &args.response,
                n: table.rows(),
                alpha: args.alpha,
                seed: args.seed,
                results: rows,
            };
            serde_json::to_writer_pretty(&mut *sink, &report)?;
            writeln!(sink)?;
        }
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(sink);
            for r in &rows {
                w.serialize(CsvRow {
                    group: &r.group,
                    k: r.k,
                    d: r.d,
                    method: r.method,
                    statistic: r.statistic,
                    p_value: r.p_value,
                    reject: r.reject,
                    mc_samples: r.mc_samples,
                    lambda: r.meta.lambda,
                    tuning_seed: r.meta.tuning_seed,
                    mc_seed: r.meta.mc_seed,
                    branch: r.meta.branch.as_deref(),
                    seconds: r.seconds,
                })?;
            }
            w.flush()?;
        }
    }
    Ok(())
}
