//! Iterative random-forest imputation of mixed-type data.

pub mod forest;

use serde::Serialize;
use thiserror::Error;

pub use forest::{fit_random_forest, ForestConfig, ForestError, RandomForest, Target};

use crate::data::{ColumnKind, ColumnRole, DataTable};
use crate::rng::derive_seed_path;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImputeError {
    #[error("column `{0}` has no observed values")]
    AllMissingColumn(String),
    #[error("column `{0}` must be fully observed")]
    MissingInFixedColumn(String),
    #[error(transparent)]
    Forest(#[from] ForestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepDelta {
    pub iteration: usize,
    /// Σ(new − old)² / Σ new² over imputed numeric cells.
    pub numeric: f64,
    /// Share of imputed categorical and binary cells that changed.
    pub categorical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OobRecord {
    pub column: String,
    /// MSE for numeric columns, misclassification rate otherwise.
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationResult {
    pub completed: DataTable,
    pub iterations_run: usize,
    pub convergence_trace: Vec<SweepDelta>,
    /// Out-of-bag errors of the forests behind the returned imputation.
    pub oob: Vec<OobRecord>,
}

impl ImputationResult {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,delta_numeric,delta_categorical\n");
        for d in &self.convergence_trace {
            out.push_str(&format!("{},{},{}\n", d.iteration, d.numeric, d.categorical));
        }
        out
    }
}

fn is_categorical(kind: &ColumnKind) -> bool {
    !matches!(kind, ColumnKind::Numeric)
}

fn n_classes(kind: &ColumnKind) -> usize {
    match kind {
        ColumnKind::Numeric => 0,
        ColumnKind::Binary => 2,
        ColumnKind::Categorical { levels } => levels.len(),
    }
}

/// Mean for numeric columns, mode (lowest code on ties) otherwise.
fn initial_fill(values: &[f64], mask: &[bool], kind: &ColumnKind) -> f64 {
    let observed = values.iter().zip(mask).filter(|(_, &m)| !m).map(|(v, _)| *v);
    if is_categorical(kind) {
        let mut counts = vec![0usize; n_classes(kind)];
        for v in observed {
            counts[v as usize] += 1;
        }
        let mut best = 0;
        for (i, &c) in counts.iter().enumerate() {
            if c > counts[best] {
                best = i;
            }
        }
        best as f64
    } else {
        let mut v: Vec<f64> = observed.collect();
        v.sort_by(f64::total_cmp);
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// missForest: mean/mode start, then sweeps over the incomplete columns in
/// ascending order of missingness, each refitting a forest on the originally
/// observed rows. Stops when either delta increases (returning the previous
/// sweep) or after `max_iterations` sweeps.
///
/// The id column is neither imputed nor used as a predictor. The treatment
/// column is a predictor and must be complete.
pub fn impute(table: &DataTable, config: &ForestConfig) -> Result<ImputationResult, ImputeError> {
    config.validate()?;
    let n = table.n_rows();
    let schema = table.schema();
    for (j, spec) in schema.iter().enumerate() {
        let fixed = matches!(spec.role, ColumnRole::Treatment | ColumnRole::Id);
        if fixed && table.missing_count(j) > 0 {
            return Err(ImputeError::MissingInFixedColumn(spec.name.clone()));
        }
        if table.missing_count(j) == n {
            return Err(ImputeError::AllMissingColumn(spec.name.clone()));
        }
    }
    if table.total_missing() == 0 {
        return Ok(ImputationResult {
            completed: table.clone(),
            iterations_run: 0,
            convergence_trace: vec![],
            oob: vec![],
        });
    }

    let usable: Vec<usize> = (0..schema.len()).filter(|&j| schema[j].role != ColumnRole::Id).collect();
    let mut current: Vec<Vec<f64>> = (0..schema.len()).map(|j| table.values(j).to_vec()).collect();
    for &j in &usable {
        let fill = initial_fill(table.values(j), table.missing_mask(j), &schema[j].kind);
        for i in 0..n {
            if table.is_missing(j, i) {
                current[j][i] = fill;
            }
        }
    }

    let mut order: Vec<usize> = usable.iter().copied().filter(|&j| table.missing_count(j) > 0).collect();
    order.sort_by_key(|&j| table.missing_count(j));

    let mut trace = Vec::new();
    let mut previous = current.clone();
    let mut previous_oob = Vec::new();
    let mut last_delta: Option<SweepDelta> = None;
    let mut stopped_on_increase = false;
    let mut oob = Vec::new();

    for iteration in 1..=config.max_iterations {
        let before = current.clone();
        oob.clear();
        for &j in &order {
            let mask = table.missing_mask(j);
            let train: Vec<usize> = (0..n).filter(|&i| !mask[i]).collect();
            let test: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
            let predictors: Vec<usize> = usable.iter().copied().filter(|&k| k != j).collect();
            let x: Vec<Vec<f64>> = predictors
                .iter()
                .map(|&k| train.iter().map(|&i| current[k][i]).collect())
                .collect();
            let cfg = ForestConfig {
                seed: derive_seed_path(config.seed, &[iteration as u64, j as u64]),
                ..config.clone()
            };
            let kind = &schema[j].kind;
            let forest = if is_categorical(kind) {
                let labels: Vec<usize> = train.iter().map(|&i| current[j][i] as usize).collect();
                fit_random_forest(&x, &Target::Classification { labels: &labels, n_classes: n_classes(kind) }, &cfg)?
            } else {
                let y: Vec<f64> = train.iter().map(|&i| current[j][i]).collect();
                fit_random_forest(&x, &Target::Regression(&y), &cfg)?
            };
            oob.push(OobRecord { column: schema[j].name.clone(), error: forest.oob_error });
            let preds: Vec<f64> = test
                .iter()
                .map(|&i| forest.predict_with(&|p| current[predictors[p]][i]))
                .collect();
            for (&i, v) in test.iter().zip(preds) {
                current[j][i] = v;
            }
        }

        let (mut num, mut den, mut changed, mut cat_cells) = (0.0, 0.0, 0usize, 0usize);
        for &j in &order {
            let cat = is_categorical(&schema[j].kind);
            for i in (0..n).filter(|&i| table.is_missing(j, i)) {
                if cat {
                    cat_cells += 1;
                    changed += (current[j][i] != before[j][i]) as usize;
                } else {
                    num += (current[j][i] - before[j][i]).powi(2);
                    den += current[j][i].powi(2);
                }
            }
        }
        let delta = SweepDelta {
            iteration,
            numeric: if den > 0.0 { num / den } else { 0.0 },
            categorical: if cat_cells > 0 { changed as f64 / cat_cells as f64 } else { 0.0 },
        };
        trace.push(delta);
        if let Some(last) = last_delta {
            if delta.numeric > last.numeric || delta.categorical > last.categorical {
                stopped_on_increase = true;
                break;
            }
        }
        if delta.numeric == 0.0 && delta.categorical == 0.0 {
            previous = current.clone();
            previous_oob = oob.clone();
            break;
        }
        last_delta = Some(delta);
        previous = current.clone();
        previous_oob = oob.clone();
    }

    let (values, oob) = if stopped_on_increase { (previous, previous_oob) } else { (current, oob) };
    let (schema, _, _) = table.clone().into_parts();
    let missing: Vec<Vec<bool>> = (0..schema.len())
        .map(|j| {
            if usable.contains(&j) {
                vec![false; n]
            } else {
                table.missing_mask(j).to_vec()
            }
        })
        .collect();
    let completed = DataTable::new(schema, values, missing).expect("imputed values respect the schema");
    Ok(ImputationResult { completed, iterations_run: trace.len(), convergence_trace: trace, oob })
}

/// Normalized RMSE over masked numeric cells: √(mean((imp − truth)²) / var(truth)).
pub fn nrmse(imputed: &DataTable, truth: &DataTable, mask: &[Vec<bool>]) -> f64 {
    let mut sq = 0.0;
    let mut vals = Vec::new();
    for (j, col_mask) in mask.iter().enumerate() {
        if !matches!(truth.spec(j).kind, ColumnKind::Numeric) {
            continue;
        }
        for (i, &m) in col_mask.iter().enumerate() {
            if m {
                let t = truth.values(j)[i];
                sq += (imputed.values(j)[i] - t).powi(2);
                vals.push(t);
            }
        }
    }
    if vals.is_empty() {
        return 0.0;
    }
    let k = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / k;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
    (sq / k / var).sqrt()
}

/// Mean/mode imputation, the baseline the forest imputation is compared to.
pub fn mean_impute(table: &DataTable) -> DataTable {
    let (schema, mut columns, missing) = table.clone().into_parts();
    for (j, spec) in schema.iter().enumerate() {
        if table.missing_count(j) == 0 || table.missing_count(j) == table.n_rows() {
            continue;
        }
        let fill = initial_fill(table.values(j), &missing[j], &spec.kind);
        for (v, &m) in columns[j].iter_mut().zip(&missing[j]) {
            if m {
                *v = fill;
            }
        }
    }
    let cleared = missing
        .iter()
        .enumerate()
        .map(|(j, m)| if table.missing_count(j) == table.n_rows() { m.clone() } else { vec![false; m.len()] })
        .collect();
    DataTable::new(schema, columns, cleared).expect("fills respect the schema")
}
