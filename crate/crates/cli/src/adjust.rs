//! `ltest adjust`: Holm or Benjamini-Hochberg on a list of p-values.

use std::io::{Read, Write};
use std::path::PathBuf;

use ltest_core::mtp::{adjust, Procedure};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::OutputFormat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ProcedureArg {
    Holm,
    Bh,
}

impl From<ProcedureArg> for Procedure {
    fn from(p: ProcedureArg) -> Self {
        match p {
            ProcedureArg::Holm => Procedure::Holm,
            ProcedureArg::Bh => Procedure::Bh,
        }
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct AdjustArgs {
    /// One p-value per line, or a CSV file with a header row; `-` reads stdin.
    #[arg(long)]
    pub pvalues: PathBuf,
    /// CSV column holding the p-values (default: the first column).
    #[arg(long)]
    pub column: Option<String>,
    #[arg(long, value_enum)]
    pub procedure: ProcedureArg,
    /// Family-wise level for Holm (default 0.05) or FDR level for BH (default 0.1).
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub out: OutputFormat,
}

#[derive(Debug, Serialize)]
struct Report {
    schema: u32,
    command: &'static str,
    procedure: Procedure,
    level: f64,
    m: usize,
    rejections: usize,
    results: Vec<Decision>,
}

#[derive(Debug, Serialize)]
struct Decision {
    index: usize,
    p_value: f64,
    reject: bool,
}

/// Reads p-values from plain lines or from a CSV column.
pub fn parse_pvalues(text: &str, column: Option<&str>) -> CliResult<Vec<f64>> {
    let first = text.lines().map(str::trim).find(|l| !l.is_empty());
    let Some(first) = first else {
        return Ok(Vec::new());
    };
    let has_header = first.split(',').next().is_some_and(|f| f.trim().parse::<f64>().is_err());
    if !has_header {
        if column.is_some() {
            return Err(CliError::usage("--column needs a CSV file with a header row"));
        }
        return text
            .lines()
            .enumerate()
            .map(|(i, l)| (i, l.trim()))
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, l)| {
                l.parse::<f64>()
                    .map_err(|_| CliError::data(format!("parse error: line {} ('{l}') is not a number", i + 1)))
            })
            .collect();
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let idx = match column {
        Some(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::data(format!("missing column '{name}'")))?,
        None => 0,
    };
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let field = record.get(idx).unwrap_or("");
        let v = field.parse::<f64>().map_err(|_| {
            CliError::data(format!("parse error: '{field}' in column '{}' at data row {} is not a number", &headers[idx], row + 1))
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn run(args: &AdjustArgs, sink: &mut dyn Write) -> CliResult<()> {
    let mut text = String::new();
    if args.pvalues.as_os_str() == "-" {
        std::io::stdin().read_to_string(&mut text)?;
    } else {
        text = std::fs::read_to_string(&args.pvalues)
            .map_err(|e| CliError::data(format!("cannot read {}: {e}", args.pvalues.display())))?;
    }
    let p = parse_pvalues(&text, args.column.as_deref())?;
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(CliError::data(format!("p-value {bad} lies outside [0, 1]")));
    }
    let procedure: Procedure = args.procedure.into();
    let level = args.level.unwrap_or(match procedure {
        Procedure::Holm => 0.05,
        Procedure::Bh => 0.1,
    });
    let res = adjust(&p, procedure, level)?;
    match args.out {
        OutputFormat::Json => {
            let report = Report {
                schema: crate::SCHEMA,
                command: "adjust",
                procedure,
                level,
                m: p.len(),
                rejections: res.rejections(),
                results: p
                    .iter()
                    .zip(&res.rejected)
                    .enumerate()
                    .map(|(index, (&p_value, &reject))| Decision { index, p_value, reject })
                    .collect(),
            };
            serde_json::to_writer_pretty(&mut *sink, &report)?;
            writeln!(sink)?;
        }
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(sink);
            w.write_record(["index", "p_value", "reject"])?;
            for (i, (v, r)) in p.iter().zip(&res.rejected).enumerate() {
                w.serialize((i, v, r))?;
            }
            w.flush()?;
        }
    }
    Ok(())
}
