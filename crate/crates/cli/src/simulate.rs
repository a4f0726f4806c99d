//! `ltest simulate`: power sweeps described by a TOML file.
//!
//! ```toml
//! methods = ["f", "l", "mcfree"]
//! seed = 7                     # default seed of every scenario
//!
//! [defaults]                   # any scenario key
//! n = 100
//! reps = 300
//!
//! [sweep]                      # cartesian product over the listed values
//! amp = [0.0, 0.2, 0.4]
//!
//! [[scenario]]
//! name = "sparse"
//! k1 = 1
//!
//! [variance]                   # optional tuning-variance experiment
//! method = "l"
//! m_outer = 20
//! m_inner = 10
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ltest_core::simlab::{run_scenario, tuning_variance_experiment, ScenarioConfig, SweepOptions, VarianceDecomposition};
use ltest_core::Method;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, clap::Args)]
pub struct SimulateArgs {
    /// TOML scenario file.
    pub config: PathBuf,
    /// Directory for results.csv and manifest.json.
    #[arg(long, default_value = "ltest-results")]
    pub out_dir: PathBuf,
    /// Overrides the seed given in the file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Record wall-clock times in the manifest (output is then not reproducible).
    #[arg(long)]
    pub timing: bool,
}

fn default_methods() -> Vec<Method> {
    vec![Method::F, Method::L, Method::Mcfree]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimFile {
    #[serde(default = "default_methods")]
    methods: Vec<Method>,
    seed: Option<u64>,
    #[serde(default)]
    defaults: Table,
    #[serde(default)]
    sweep: Table,
    #[serde(default)]
    scenario: Vec<Table>,
    variance: Option<VarianceSpec>,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct VarianceSpec {
    method: Method,
    m_outer: usize,
    m_inner: usize,
}

/// Fully resolved simulation plan.
#[derive(Debug, Clone)]
pub struct Plan {
    pub methods: Vec<Method>,
    pub scenarios: Vec<ScenarioConfig>,
    variance: Option<VarianceSpec>,
}

fn config_error(path: &str, e: impl std::fmt::Display) -> CliError {
    CliError::usage(format!("config error at {path}: {e}"))
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Parses the TOML text into a plan; every error names the offending key path.
pub fn parse_plan(text: &str, seed_override: Option<u64>) -> CliResult<Plan> {
    let file: SimFile = toml::from_str(text).map_err(|e| config_error("<root>", e.message()))?;
    if file.methods.is_empty() {
        return Err(config_error("methods", "at least one method is required"));
    }
    let mut base = Table::new();
    if let Some(seed) = seed_override.or(file.seed) {
        let seed = i64::try_from(seed).map_err(|_| config_error("seed", "seed must be below 2^63"))?;
        base.insert("seed".into(), Value::Integer(seed));
    }
    base.extend(file.defaults.clone());

    let scenarios = if file.scenario.is_empty() { vec![Table::new()] } else { file.scenario.clone() };
    let mut sweep: Vec<(String, Vec<Value>)> = Vec::new();
    for (key, values) in &file.sweep {
        match values {
            Value::Array(vs) if !vs.is_empty() => sweep.push((key.clone(), vs.clone())),
            _ => return Err(config_error(&format!("sweep.{key}"), "expected a non-empty array")),
        }
    }

    let mut out = Vec::new();
    for (si, scenario) in scenarios.iter().enumerate() {
        let mut table = base.clone();
        table.extend(scenario.clone());
        let mut points = vec![(table, Vec::<String>::new())];
        for (key, values) in &sweep {
            points = points
                .into_iter()
                .flat_map(|(t, labels)| {
                    values.iter().map(move |v| {
                        let mut t = t.clone();
                        t.insert(key.clone(), v.clone());
                        let mut labels = labels.clone();
                        labels.push(format!("{key}={}", value_label(v)));
                        (t, labels)
                    })
                })
                .collect();
        }
        for (table, labels) in points {
            let path = format!("scenario[{si}]");
            let mut cfg = ScenarioConfig::deserialize(Value::Table(table)).map_err(|e| config_error(&path, e))?;
            if let Some(name) = &cfg.name {
                if !labels.is_empty() {
                    cfg.name = Some(format!("{name}/{}", labels.join("/")));
                }
            }
            cfg.validate().map_err(|e| config_error(&path, e))?;
            out.push(cfg);
        }
    }
    Ok(Plan {
        methods: file.methods,
        scenarios: out,
        variance: file.variance,
    })
}

#[derive(Debug, Serialize)]
struct CsvRecord<'a> {
    scenario: &'a str,
    n: usize,
    d: usize,
    k: usize,
    amp: f64,
    k1: usize,
    k2: usize,
    rho: f64,
    violation: String,
    seed: u64,
    method: Method,
    reps: usize,
    rejections: usize,
    failures: usize,
    rejection_rate: f64,
    standard_error: f64,
}

#[derive(Debug, Serialize)]
struct VarianceRecord {
    scenario: String,
    method: Method,
    #[serde(flatten)]
    result: VarianceDecomposition,
}

#[derive(Debug, Serialize)]
struct Timing {
    scenario: String,
    method: Method,
    seconds: f64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema: u32,
    command: &'static str,
    tool_version: &'static str,
    core_version: &'static str,
    config: String,
    methods: &'a [Method],
    scenarios: &'a [ScenarioConfig],
    results_csv: &'static str,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    variance: Vec<VarianceRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_time_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timing: Option<Vec<Timing>>,
}

fn violation_label(cfg: &ScenarioConfig) -> String {
    serde_json::to_string(&cfg.violation).unwrap_or_default()
}

pub fn run(args: &SimulateArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", args.config.display())))?;
    let plan = parse_plan(&text, args.seed)?;
    let started = Instant::now();
    let opts = SweepOptions {
        record_timing: args.timing,
    };

    let mut records = Vec::new();
    for cfg in &plan.scenarios {
        records.extend(run_scenario(cfg, &plan.methods, opts)?);
    }
    let mut variance = Vec::new();
    if let Some(spec) = plan.variance {
        for cfg in &plan.scenarios {
            variance.push(VarianceRecord {
                scenario: cfg.id(),
                method: spec.method,
                result: tuning_variance_experiment(cfg, spec.method, spec.m_outer, spec.m_inner)?,
            });
        }
    }

    let mut csv_bytes = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut csv_bytes);
        let per = plan.methods.len();
        for (i, r) in records.iter().enumerate() {
            let cfg = &plan.scenarios[i / per];
            w.serialize(CsvRecord {
                scenario: &r.scenario,
                n: cfg.n,
                d: cfg.d,
                k: cfg.k,
                amp: cfg.amp,
                k1: cfg.k1,
                k2: cfg.k2,
                rho: cfg.rho,
                violation: violation_label(cfg),
                seed: cfg.seed,
                method: r.method,
                reps: r.reps,
                rejections: r.rejections,
                failures: r.failures,
                rejection_rate: r.rejection_rate,
                standard_error: r.standard_error,
            })?;
        }
        w.flush()?;
    }

    let timing = args.timing.then(|| {
        records
            .iter()
            .map(|r| Timing {
                scenario: r.scenario.clone(),
                method: r.method,
                seconds: r.wall_time.unwrap_or(0.0),
            })
            .collect()
    });
    let manifest = Manifest {
        schema: crate::SCHEMA,
        command: "simulate",
        tool_version: env!("CARGO_PKG_VERSION"),
        core_version: ltest_core::VERSION,
        config: args.config.display().to_string(),
        methods: &plan.methods,
        scenarios: &plan.scenarios,
        results_csv: "results.csv",
        variance,
        wall_time_seconds: args.timing.then(|| started.elapsed().as_secs_f64()),
        timing,
    };
    write_outputs(&args.out_dir, &csv_bytes, &manifest)?;
    stdout.write_all(&csv_bytes)?;
    Ok(())
}

fn write_outputs(dir: &Path, csv_bytes: &[u8], manifest: &Manifest<'_>) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("results.csv"), csv_bytes)?;
    let mut json = serde_json::to_vec_pretty(manifest)?;
    json.push(b'\n');
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}
