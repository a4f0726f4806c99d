//! CSV ingestion and per-group design assembly.

use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use ltest_core::simlab::{standardize_columns, ColumnScale};
use ltest_core::{build_model, ModelContext};
use nalgebra::{DMatrix, DVector};

use crate::error::{CliError, CliResult};

/// Numeric table read from a CSV file with a header row.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.len())
    }

    pub fn index_of(&self, name: &str) -> CliResult<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::data(format!("missing column '{name}'")))
    }
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let mut text = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    parse_table(&text)
}

pub fn parse_table(text: &str) -> CliResult<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(CliError::data("parse error: missing header row"));
    }
    for (i, h) in headers.iter().enumerate() {
        if headers[..i].contains(h) {
            return Err(CliError::data(format!("duplicate column name '{h}'")));
        }
    }
    let mut columns = vec![Vec::new(); headers.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for (j, field) in record.iter().enumerate() {
            let v = f64::from_str(field).ok().filter(|v| v.is_finite()).ok_or_else(|| {
                CliError::data(format!(
                    "non-numeric value '{field}' in column '{}' at data row {}",
                    headers[j],
                    row + 1
                ))
            })?;
            columns[j].push(v);
        }
    }
    Ok(Table { headers, columns })
}

/// A named tested group, parsed from `name=col1,col2,...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSpec {
    pub name: String,
    pub columns: Vec<String>,
}

impl FromStr for GroupSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, cols) = s
            .split_once('=')
            .ok_or_else(|| format!("group '{s}' must look like name=col1,col2"))?;
        let name = name.trim();
        let columns: Vec<String> = cols.split(',').map(|c| c.trim().to_string()).collect();
        if name.is_empty() || columns.iter().any(String::is_empty) {
            return Err(format!("group '{s}' has an empty name or column"));
        }
        Ok(GroupSpec {
            name: name.to_string(),
            columns,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub response: String,
    pub groups: Vec<GroupSpec>,
    pub standardize: bool,
    pub intercept: bool,
}

/// Design for one tested group: the group first, every other covariate
/// after it, then the optional intercept.
#[derive(Debug, Clone)]
pub struct GroupDesign {
    pub name: String,
    pub columns: Vec<String>,
    pub ctx: ModelContext,
}

pub fn ingest(table: &Table, spec: &DatasetSpec) -> CliResult<(Vec<GroupDesign>, DVector<f64>)> {
    let n = table.rows();
    let resp = table.index_of(&spec.response)?;
    let y = DVector::from_column_slice(&table.columns[resp]);
    let covariates: Vec<usize> = (0..table.headers.len()).filter(|&j| j != resp).collect();

    let mut cov = DMatrix::from_fn(n, covariates.len(), |i, j| table.columns[covariates[j]][i]);
    if spec.standardize {
        for (j, col) in cov.column_iter().enumerate() {
            let mean = col.mean();
            if col.iter().all(|v| (v - mean).abs() <= 1e-300) {
                return Err(CliError::data(format!(
                    "column '{}' is constant and cannot be standardized",
                    table.headers[covariates[j]]
                )));
            }
        }
        standardize_columns(&mut cov, ColumnScale::UnitNorm);
    }

    let mut out = Vec::with_capacity(spec.groups.len());
    for group in &spec.groups {
        let mut tested = Vec::with_capacity(group.columns.len());
        for (i, name) in group.columns.iter().enumerate() {
            if *name == spec.response {
                return Err(CliError::data(format!(
                    "group '{}' contains the response column '{name}'",
                    group.name
                )));
            }
            if group.columns[..i].contains(name) {
                return Err(CliError::data(format!(
                    "group '{}' lists column '{name}' twice",
                    group.name
                )));
            }
            let idx = table.index_of(name)?;
            tested.push(covariates.iter().position(|&c| c == idx).unwrap());
        }
        let nuisance: Vec<usize> = (0..covariates.len()).filter(|j| !tested.contains(j)).collect();
        let d = tested.len() + nuisance.len() + usize::from(spec.intercept);
        let order: Vec<usize> = tested.iter().chain(&nuisance).copied().collect();
        let x = DMatrix::from_fn(n, d, |i, j| if j < order.len() { cov[(i, order[j])] } else { 1.0 });
        let ctx = build_model(x, tested.len())
            .map_err(|e| CliError::from(e).context(&format!("group '{}'", group.name)))?;
        out.push(GroupDesign {
            name: group.name.clone(),
            columns: group.columns.clone(),
            ctx,
        });
    }
    Ok((out, y))
}
