//! Composite symptom-severity outcome.
//!
//! Each continuous scale is mapped onto eleven equiprobable bins (codes
//! 0..=10) of a skew-normal law fitted to that scale on that assessment
//! occasion; dichotomous scales map to the extreme codes. Scales where higher
//! raw values mean more severe symptoms are negated first, so code 10 always
//! denotes the least severe bin. The composite is the sum of the seven codes.

pub mod skew_normal;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ColumnKind, DataTable};
pub use skew_normal::SkewNormalParams;

/// Number of bins per scale.
pub const N_BINS: usize = 11;

#[derive(Debug, Error, PartialEq)]
pub enum CompositeError {
    #[error("scale `{0}` has zero variance")]
    DegenerateScale(String),
    #[error("scale `{scale}` needs at least 10 observed values, got {n}")]
    InsufficientData { scale: String, n: usize },
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("column `{0}` still contains missing values")]
    MissingValues(String),
    #[error("value {value} on dichotomous scale `{scale}` is not 0/1")]
    NotBinary { scale: String, value: f64 },
    #[error("scale `{0}` is not continuous")]
    NotContinuous(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherIsBetter,
    HigherIsWorse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleKind {
    Continuous,
    Dichotomous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSpec {
    pub name: String,
    pub direction: Direction,
    pub kind: ScaleKind,
    pub baseline_column: String,
    pub post_column: String,
}

impl ScaleSpec {
    fn new(name: &str, direction: Direction, kind: ScaleKind) -> Self {
        Self {
            name: name.to_string(),
            direction,
            kind,
            baseline_column: format!("{name}_t1"),
            post_column: format!("{name}_t2"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeConfig {
    pub scales: Vec<ScaleSpec>,
}

impl Default for CompositeConfig {
    fn default() -> Self {
        Self::trial_default()
    }
}

impl CompositeConfig {
    /// The seven-component configuration used by the trial layout; column
    /// names follow the `<scale>_t1` / `<scale>_t2` convention of the
    /// synthetic generator.
    pub fn trial_default() -> Self {
        use Direction::*;
        use ScaleKind::*;
        Self {
            scales: vec![
                ScaleSpec::new("penetration", HigherIsBetter, Dichotomous),
                ScaleSpec::new("self_insertion", HigherIsBetter, Continuous),
                ScaleSpec::new("pain", HigherIsBetter, Continuous),
                ScaleSpec::new("pain_interference", HigherIsWorse, Continuous),
                ScaleSpec::new("coital_fear", HigherIsWorse, Continuous),
                ScaleSpec::new("noncoital_fear", HigherIsWorse, Continuous),
                ScaleSpec::new("satisfaction", HigherIsBetter, Continuous),
            ],
        }
    }

    pub fn max_score(&self) -> u32 {
        10 * self.scales.len() as u32
    }
}

/// Method-of-moments skew-normal fit (mean, n−1 SD, clamped moment skewness).
pub fn fit_skew_normal(values: &[f64]) -> Result<SkewNormalParams, CompositeError> {
    fit_named(values, "unnamed")
}

fn fit_named(values: &[f64], scale: &str) -> Result<SkewNormalParams, CompositeError> {
    if values.len() < 10 {
        return Err(CompositeError::InsufficientData { scale: scale.to_string(), n: values.len() });
    }
    let (mean, sd, skew) = skew_normal::sample_moments(values);
    if !(sd > 0.0) || sd < 1e-12 * mean.abs().max(1.0) {
        return Err(CompositeError::DegenerateScale(scale.to_string()));
    }
    SkewNormalParams::from_moments(mean, sd, skew)
        .ok_or_else(|| CompositeError::DegenerateScale(scale.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileMap {
    pub scale: String,
    /// Ten non-decreasing cut values on the harmonized (possibly negated) axis.
    pub boundaries: Vec<f64>,
    pub fitted: SkewNormalParams,
    /// Whether raw values are negated before binning.
    pub negated: bool,
}

impl QuantileMap {
    /// Bin code in 0..=10: the number of boundaries strictly below the
    /// harmonized value.
    pub fn assign_bin(&self, value: f64) -> u8 {
        let v = if self.negated { -value } else { value };
        self.boundaries.iter().filter(|&&b| b < v).count() as u8
    }
}

pub fn build_quantile_map(values: &[f64], spec: &ScaleSpec) -> Result<QuantileMap, CompositeError> {
    if spec.kind != ScaleKind::Continuous {
        return Err(CompositeError::NotContinuous(spec.name.clone()));
    }
    let negated = spec.direction == Direction::HigherIsWorse;
    let harmonized: Vec<f64> =
        values.iter().map(|&v| if negated { -v } else { v }).collect();
    let fitted = fit_named(&harmonized, &spec.name)?;
    let mut boundaries: Vec<f64> =
        (1..N_BINS).map(|k| fitted.quantile(k as f64 / N_BINS as f64)).collect();
    // Bisection noise must not reorder boundaries; coincident ones are kept.
    for k in 1..boundaries.len() {
        if boundaries[k] < boundaries[k - 1] {
            boundaries[k] = boundaries[k - 1];
        }
    }
    Ok(QuantileMap { scale: spec.name.clone(), boundaries, fitted, negated })
}

pub fn assign_bin(value: f64, map: &QuantileMap) -> u8 {
    map.assign_bin(value)
}

/// 0 → 0 and 1 → 10.
pub fn assign_dichotomous(value: f64) -> Option<u8> {
    if value == 0.0 {
        Some(0)
    } else if value == 1.0 {
        Some(10)
    } else {
        None
    }
}

pub fn composite_score(bins: &[u8]) -> u32 {
    bins.iter().map(|&b| b as u32).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Occasion {
    Baseline,
    Post,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleMaps {
    pub scale: String,
    pub baseline: Option<QuantileMap>,
    pub post: Option<QuantileMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeResult {
    pub scale_names: Vec<String>,
    pub baseline: Vec<f64>,
    pub post: Vec<f64>,
    /// `baseline_bins[scale][row]`.
    pub baseline_bins: Vec<Vec<u8>>,
    pub post_bins: Vec<Vec<u8>>,
    pub maps: Vec<ScaleMaps>,
}

fn bins_for(
    table: &DataTable,
    spec: &ScaleSpec,
    column: &str,
) -> Result<(Vec<u8>, Option<QuantileMap>), CompositeError> {
    let j = table
        .column_index(column)
        .ok_or_else(|| CompositeError::MissingColumn(column.to_string()))?;
    if table.missing_count(j) > 0 {
        return Err(CompositeError::MissingValues(column.to_string()));
    }
    let values = table.values(j);
    match spec.kind {
        ScaleKind::Dichotomous => {
            let bins = values
                .iter()
                .map(|&v| {
                    assign_dichotomous(v)
                        .ok_or(CompositeError::NotBinary { scale: spec.name.clone(), value: v })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((bins, None))
        }
        ScaleKind::Continuous => {
            if matches!(table.spec(j).kind, ColumnKind::Categorical { .. }) {
                return Err(CompositeError::NotContinuous(spec.name.clone()));
            }
            let map = build_quantile_map(values, spec)?;
            let bins = values.iter().map(|&v| map.assign_bin(v)).collect();
            Ok((bins, Some(map)))
        }
    }
}

fn row_sums(bins: &[Vec<u8>], n: usize, skip: Option<usize>) -> Vec<f64> {
    (0..n)
        .map(|i| {
            bins.iter()
                .enumerate()
                .filter(|(k, _)| Some(*k) != skip)
                .map(|(_, b)| b[i] as u32)
                .sum::<u32>() as f64
        })
        .collect()
}

/// Builds baseline and post composites from a fully observed table. Quantile
/// maps are fitted per scale and per occasion.
pub fn build_composites(
    table: &DataTable,
    config: &CompositeConfig,
) -> Result<CompositeResult, CompositeError> {
    let n = table.n_rows();
    let mut baseline_bins = Vec::with_capacity(config.scales.len());
    let mut post_bins = Vec::with_capacity(config.scales.len());
    let mut maps = Vec::with_capacity(config.scales.len());
    for spec in &config.scales {
        let (bb, bm) = bins_for(table, spec, &spec.baseline_column)?;
        let (pb, pm) = bins_for(table, spec, &spec.post_column)?;
        baseline_bins.push(bb);
        post_bins.push(pb);
        maps.push(ScaleMaps { scale: spec.name.clone(), baseline: bm, post: pm });
    }
    Ok(CompositeResult {
        scale_names: config.scales.iter().map(|s| s.name.clone()).collect(),
        baseline: row_sums(&baseline_bins, n, None),
        post: row_sums(&post_bins, n, None),
        baseline_bins,
        post_bins,
        maps,
    })
}

/// One composite per omitted scale, for the given occasion.
pub fn leave_one_out_composites(result: &CompositeResult, occasion: Occasion) -> Vec<Vec<f64>> {
    let bins = match occasion {
        Occasion::Baseline => &result.baseline_bins,
        Occasion::Post => &result.post_bins,
    };
    let n = bins.first().map_or(0, Vec::len);
    (0..bins.len()).map(|k| row_sums(bins, n, Some(k))).collect()
}

/// Per-scale diagnostics: fitted parameters, boundaries and bin counts.
pub fn diagnostics_csv(result: &CompositeResult) -> String {
    let mut out = String::from("scale,occasion,location,scale_param,shape,negated");
    for k in 1..N_BINS {
        out.push_str(&format!(",boundary_{k}"));
    }
    for k in 0..N_BINS {
        out.push_str(&format!(",count_{k}"));
    }
    out.push('\n');
    for (s, maps) in result.maps.iter().enumerate() {
        for (occasion, map, bins) in [
            ("baseline", &maps.baseline, &result.baseline_bins[s]),
            ("post", &maps.post, &result.post_bins[s]),
        ] {
            out.push_str(&format!("{},{occasion}", maps.scale));
            match map {
                Some(m) => {
                    out.push_str(&format!(
                        ",{},{},{},{}",
                        m.fitted.location, m.fitted.scale, m.fitted.shape, m.negated
                    ));
                    for b in &m.boundaries {
                        out.push_str(&format!(",{b}"));
                    }
                }
                None => out.push_str(&",NA".repeat(4 + N_BINS - 1)),
            }
            let mut counts = [0usize; N_BINS];
            for &b in bins {
                counts[b as usize] += 1;
            }
            for c in counts {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
    }
    out
}
