//! Mixed-type tabular container for trial data.
//!
//! Values are stored column-wise as `f64`. Binary columns hold `0.0`/`1.0`,
//! categorical columns hold the level index. Missing cells are tracked in a
//! separate mask and carry `NaN` in the value vector.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("column `{0}` does not match the schema")]
    UnknownColumn(String),
    #[error("parse error at row {row}, column `{column}`: cannot read `{value}`")]
    ParseError { row: usize, column: String, value: String },
    #[error("table has no rows")]
    EmptyTable,
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("invalid table: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Binary,
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    OutcomeComponentBaseline,
    OutcomeComponentPost,
    Moderator,
    Treatment,
    Id,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub role: ColumnRole,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, kind: ColumnKind, role: ColumnRole) -> Self {
        Self { name: name.into(), kind, role }
    }

    pub fn numeric(name: impl Into<String>, role: ColumnRole) -> Self {
        Self::new(name, ColumnKind::Numeric, role)
    }

    pub fn binary(name: impl Into<String>, role: ColumnRole) -> Self {
        Self::new(name, ColumnKind::Binary, role)
    }

    pub fn categorical(name: impl Into<String>, levels: &[&str], role: ColumnRole) -> Self {
        let levels = levels.iter().map(|s| s.to_string()).collect();
        Self::new(name, ColumnKind::Categorical { levels }, role)
    }
}

/// Checks the schema-level invariants: unique names, sane level lists and a
/// single binary treatment column.
pub fn validate_schema(schema: &[ColumnSpec]) -> Result<(), DataError> {
    let mut seen = HashMap::new();
    for (i, spec) in schema.iter().enumerate() {
        if seen.insert(spec.name.as_str(), i).is_some() {
            return Err(DataError::Schema(format!("duplicate column `{}`", spec.name)));
        }
        if let ColumnKind::Categorical { levels } = &spec.kind {
            if levels.is_empty() {
                return Err(DataError::Schema(format!("`{}` declares no levels", spec.name)));
            }
            let mut uniq: Vec<&String> = levels.iter().collect();
            uniq.sort();
            uniq.dedup();
            if uniq.len() != levels.len() {
                return Err(DataError::Schema(format!("`{}` has duplicate levels", spec.name)));
            }
        }
    }
    let treatments: Vec<&ColumnSpec> =
        schema.iter().filter(|s| s.role == ColumnRole::Treatment).collect();
    match treatments.as_slice() {
        [t] if t.kind == ColumnKind::Binary => Ok(()),
        [t] => Err(DataError::Schema(format!("treatment column `{}` must be binary", t.name))),
        _ => Err(DataError::Schema(format!(
            "expected exactly one treatment column, found {}",
            treatments.len()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    schema: Vec<ColumnSpec>,
    columns: Vec<Vec<f64>>,
    missing: Vec<Vec<bool>>,
}

impl DataTable {
    /// Builds a table, checking every schema and cell invariant. Missing cells
    /// are normalized to `NaN`.
    pub fn new(
        schema: Vec<ColumnSpec>,
        mut columns: Vec<Vec<f64>>,
        missing: Vec<Vec<bool>>,
    ) -> Result<Self, DataError> {
        validate_schema(&schema)?;
        if columns.len() != schema.len() || missing.len() != schema.len() {
            return Err(DataError::Invalid("column count differs from schema".into()));
        }
        let n = columns.first().map_or(0, Vec::len);
        if n == 0 {
            return Err(DataError::EmptyTable);
        }
        for (j, spec) in schema.iter().enumerate() {
            if columns[j].len() != n || missing[j].len() != n {
                return Err(DataError::Invalid(format!("column `{}` has wrong length", spec.name)));
            }
            for i in 0..n {
                if missing[j][i] {
                    columns[j][i] = f64::NAN;
                    continue;
                }
                let v = columns[j][i];
                let ok = match &spec.kind {
                    ColumnKind::Numeric => v.is_finite(),
                    ColumnKind::Binary => v == 0.0 || v == 1.0,
                    ColumnKind::Categorical { levels } => {
                        v >= 0.0 && v.fract() == 0.0 && (v as usize) < levels.len()
                    }
                };
                if !ok {
                    return Err(DataError::Invalid(format!(
                        "invalid value {v} at row {i} of `{}`",
                        spec.name
                    )));
                }
            }
        }
        Ok(Self { schema, columns, missing })
    }

    /// Builds a fully observed table.
    pub fn from_columns(schema: Vec<ColumnSpec>, columns: Vec<Vec<f64>>) -> Result<Self, DataError> {
        let missing = columns.iter().map(|c| vec![false; c.len()]).collect();
        Self::new(schema, columns, missing)
    }

    pub fn n_rows(&self) -> usize {
        self.columns[0].len()
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &[ColumnSpec] {
        &self.schema
    }

    pub fn spec(&self, col: usize) -> &ColumnSpec {
        &self.schema[col]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|s| s.name == name)
    }

    /// Raw values of a column; missing cells are `NaN`.
    pub fn values(&self, col: usize) -> &[f64] {
        &self.columns[col]
    }

    pub fn missing_mask(&self, col: usize) -> &[bool] {
        &self.missing[col]
    }

    pub fn is_missing(&self, col: usize, row: usize) -> bool {
        self.missing[col][row]
    }

    pub fn get(&self, col: usize, row: usize) -> Option<f64> {
        (!self.missing[col][row]).then(|| self.columns[col][row])
    }

    pub fn missing_count(&self, col: usize) -> usize {
        self.missing[col].iter().filter(|&&m| m).count()
    }

    pub fn total_missing(&self) -> usize {
        (0..self.n_cols()).map(|j| self.missing_count(j)).sum()
    }

    /// Observed values of a column, in row order.
    pub fn observed(&self, col: usize) -> Vec<f64> {
        self.columns[col]
            .iter()
            .zip(&self.missing[col])
            .filter(|(_, &m)| !m)
            .map(|(&v, _)| v)
            .collect()
    }

    pub fn columns_with_role(&self, role: ColumnRole) -> Vec<usize> {
        (0..self.n_cols()).filter(|&j| self.schema[j].role == role).collect()
    }

    pub fn treatment_column(&self) -> usize {
        self.schema
            .iter()
            .position(|s| s.role == ColumnRole::Treatment)
            .expect("schema validated with one treatment column")
    }

    /// Returns a copy with cell values and mask replaced for one column.
    pub fn with_column(
        &self,
        col: usize,
        values: Vec<f64>,
        missing: Vec<bool>,
    ) -> Result<Self, DataError> {
        let mut columns = self.columns.clone();
        let mut masks = self.missing.clone();
        columns[col] = values;
        masks[col] = missing;
        Self::new(self.schema.clone(), columns, masks)
    }

    /// Consumes the table into (schema, columns, masks).
    pub fn into_parts(self) -> (Vec<ColumnSpec>, Vec<Vec<f64>>, Vec<Vec<bool>>) {
        (self.schema, self.columns, self.missing)
    }

    /// Row subset (with repetition allowed) in the given order.
    pub fn take_rows(&self, rows: &[usize]) -> Result<Self, DataError> {
        let columns = self.columns.iter().map(|c| rows.iter().map(|&i| c[i]).collect()).collect();
        let missing = self.missing.iter().map(|c| rows.iter().map(|&i| c[i]).collect()).collect();
        Self::new(self.schema.clone(), columns, missing)
    }

    /// String form of a cell, as written to CSV.
    pub fn format_cell(&self, col: usize, row: usize, missing_token: &str) -> String {
        if self.missing[col][row] {
            return missing_token.to_string();
        }
        let v = self.columns[col][row];
        match &self.schema[col].kind {
            ColumnKind::Numeric => format!("{v}"),
            ColumnKind::Binary => if v == 1.0 { "1" } else { "0" }.to_string(),
            ColumnKind::Categorical { levels } => levels[v as usize].clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    /// Cell contents treated as missing on input.
    pub missing_tokens: Vec<String>,
    /// Token written for missing cells on output.
    pub missing_output: String,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self { missing_tokens: vec![String::new(), "NA".into()], missing_output: "NA".into() }
    }
}

pub fn read_csv(path: impl AsRef<Path>, schema: &[ColumnSpec]) -> Result<DataTable, DataError> {
    read_csv_with(File::open(path)?, schema, &CsvOptions::default())
}

/// Reads a header-first CSV whose header names match the schema exactly (in
/// any order).
pub fn read_csv_with<R: Read>(
    reader: R,
    schema: &[ColumnSpec],
    options: &CsvOptions,
) -> Result<DataTable, DataError> {
    validate_schema(schema)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut position = vec![usize::MAX; schema.len()];
    for (h, name) in headers.iter().enumerate() {
        let j = schema
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))?;
        if position[j] != usize::MAX {
            return Err(DataError::UnknownColumn(name.to_string()));
        }
        position[j] = h;
    }
    if let Some(j) = position.iter().position(|&p| p == usize::MAX) {
        return Err(DataError::UnknownColumn(schema[j].name.clone()));
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); schema.len()];
    let mut missing: Vec<Vec<bool>> = vec![Vec::new(); schema.len()];
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        for (j, spec) in schema.iter().enumerate() {
            let cell = record.get(position[j]).unwrap_or("");
            if options.missing_tokens.iter().any(|t| t == cell) {
                columns[j].push(f64::NAN);
                missing[j].push(true);
                continue;
            }
            let parse_err = || DataError::ParseError {
                row,
                column: spec.name.clone(),
                value: cell.to_string(),
            };
            let v = match &spec.kind {
                ColumnKind::Numeric => {
                    let v: f64 = cell.trim().parse().map_err(|_| parse_err())?;
                    if !v.is_finite() {
                        return Err(parse_err());
                    }
                    v
                }
                ColumnKind::Binary => match cell.trim() {
                    "0" => 0.0,
                    "1" => 1.0,
                    _ => return Err(parse_err()),
                },
                ColumnKind::Categorical { levels } => {
                    levels.iter().position(|l| l == cell).ok_or_else(parse_err)? as f64
                }
            };
            columns[j].push(v);
            missing[j].push(false);
        }
    }
    if columns[0].is_empty() {
        return Err(DataError::EmptyTable);
    }
    DataTable::new(schema.to_vec(), columns, missing)
}

pub fn write_csv(table: &DataTable, path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = File::create(path)?;
    write_csv_to(table, file, &CsvOptions::default())
}

/// Writes the table in schema order. Fields are quoted only when they contain
/// a delimiter, quote or newline.
pub fn write_csv_to<W: Write>(
    table: &DataTable,
    writer: W,
    options: &CsvOptions,
) -> Result<(), DataError> {
    let mut wtr = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(writer);
    wtr.write_record(table.schema.iter().map(|s| s.name.as_str()))?;
    for i in 0..table.n_rows() {
        let row: Vec<String> =
            (0..table.n_cols()).map(|j| table.format_cell(j, i, &options.missing_output)).collect();
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn to_csv_string(table: &DataTable) -> String {
    let mut buf = Vec::new();
    write_csv_to(table, &mut buf, &CsvOptions::default()).expect("in-memory write");
    String::from_utf8(buf).expect("csv output is utf-8")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnSummary {
    pub name: String,
    pub n_observed: usize,
    pub missing: usize,
    /// `None` when no cell is observed.
    pub mean: Option<f64>,
    /// Sample SD with the n-1 denominator; `None` below two observations.
    pub sd: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// Level frequencies for categorical and binary columns.
    pub levels: Option<Vec<(String, usize)>>,
}

pub fn summarize(table: &DataTable) -> Vec<ColumnSummary> {
    (0..table.n_cols())
        .map(|j| {
            let spec = table.spec(j);
            let mut obs = table.observed(j);
            let n_obs = obs.len();
            // Sorting makes the floating-point sums independent of row order.
            obs.sort_by(f64::total_cmp);
            let mean = (n_obs > 0).then(|| obs.iter().sum::<f64>() / n_obs as f64);
            let sd = match (mean, n_obs) {
                (Some(m), k) if k >= 2 => {
                    let ss: f64 = obs.iter().map(|v| (v - m) * (v - m)).sum();
                    Some((ss / (k as f64 - 1.0)).sqrt())
                }
                _ => None,
            };
            let levels = match &spec.kind {
                ColumnKind::Numeric => None,
                ColumnKind::Binary => Some(vec![
                    ("0".to_string(), obs.iter().filter(|&&v| v == 0.0).count()),
                    ("1".to_string(), obs.iter().filter(|&&v| v == 1.0).count()),
                ]),
                ColumnKind::Categorical { levels } => Some(
                    levels
                        .iter()
                        .enumerate()
                        .map(|(k, l)| (l.clone(), obs.iter().filter(|&&v| v as usize == k).count()))
                        .collect(),
                ),
            };
            ColumnSummary {
                name: spec.name.clone(),
                n_observed: n_obs,
                missing: table.n_rows() - n_obs,
                mean,
                sd,
                min: obs.first().copied(),
                max: obs.last().copied(),
                levels,
            }
        })
        .collect()
}
