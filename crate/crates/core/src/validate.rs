//! Fit metrics, per-leaf Cohen's d, and bootstrap optimism correction.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mob::{grow, MobConfig, MobData, MobError, MobTree};
use crate::mobforest::{fit_forest, permutation_importance, preselect, ForestError, ImportanceTable, MobForestConfig};
use crate::rng::{derive_seed, rng_from_seed};

/// Two-sided 95% normal quantile.
pub const Z_975: f64 = 1.959964;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidateError {
    #[error("observed outcome has zero variance")]
    ZeroVariance,
    #[error("need equal-length vectors with more than n_params + 1 entries")]
    Shape,
    #[error("each arm needs at least two observations (treated {n_treat}, control {n_control})")]
    SingleArmLeaf { n_treat: usize, n_control: usize },
    #[error("all bootstrap replicates failed")]
    AllReplicatesFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectSize {
    pub d: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub se_d: f64,
    pub n_treat: usize,
    pub n_control: usize,
}

impl EffectSize {
    /// Large-sample SE of d and the 95% interval around it.
    pub fn from_d(d: f64, n_treat: usize, n_control: usize) -> Self {
        let (n1, n2) = (n_treat as f64, n_control as f64);
        let se_d = ((n1 + n2) / (n1 * n2) + d * d / (2.0 * (n1 + n2))).sqrt();
        Self {
            d,
            ci_low: d - Z_975 * se_d,
            ci_high: d + Z_975 * se_d,
            se_d,
            n_treat,
            n_control,
        }
    }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Standardized mean difference (treated minus control) with pooled SD.
pub fn cohens_d(treated: &[f64], control: &[f64]) -> Result<EffectSize, ValidateError> {
    let (n1, n2) = (treated.len(), control.len());
    if n1 < 2 || n2 < 2 {
        return Err(ValidateError::SingleArmLeaf { n_treat: n1, n_control: n2 });
    }
    let (m1, v1) = mean_var(treated);
    let (m2, v2) = mean_var(control);
    let pooled = (((n1 - 1) as f64 * v1 + (n2 - 1) as f64 * v2) / (n1 + n2 - 2) as f64).sqrt();
    let diff = m1 - m2;
    let d = if pooled > 0.0 {
        diff / pooled
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    };
    Ok(EffectSize::from_d(d, n1, n2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub r2: f64,
    pub adj_r2: f64,
    pub rmse: f64,
}

impl Metrics {
    fn zip(self, other: Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self { r2: f(self.r2, other.r2), adj_r2: f(self.adj_r2, other.adj_r2), rmse: f(self.rmse, other.rmse) }
    }
}

/// R² about the observed mean, adjusted R² with `n_params` estimated
/// coefficients, and RMSE.
pub fn r2_rmse(predictions: &[f64], observed: &[f64], n_params: usize) -> Result<Metrics, ValidateError> {
    let n = observed.len();
    if predictions.len() != n || n < 2 || n <= n_params + 1 {
        return Err(ValidateError::Shape);
    }
    let mean = observed.iter().sum::<f64>() / n as f64;
    let sst: f64 = observed.iter().map(|y| (y - mean).powi(2)).sum();
    if sst == 0.0 {
        return Err(ValidateError::ZeroVariance);
    }
    let sse: f64 = observed.iter().zip(predictions).map(|(y, p)| (y - p).powi(2)).sum();
    let r2 = 1.0 - sse / sst;
    let nf = n as f64;
    Ok(Metrics {
        r2,
        adj_r2: 1.0 - (1.0 - r2) * (nf - 1.0) / (nf - n_params as f64 - 1.0),
        rmse: (sse / nf).sqrt(),
    })
}

/// A fitted prediction model.
pub trait Fitted: Send {
    fn predict(&self, data: &MobData) -> Result<Vec<f64>, String>;
    fn n_params(&self) -> usize;
}

/// A model-building procedure, re-runnable as a pure function of data and
/// seed.
pub trait Procedure: Sync {
    fn fit(&self, data: &MobData, seed: u64) -> Result<Box<dyn Fitted>, String>;
}

impl Fitted for MobTree {
    fn predict(&self, data: &MobData) -> Result<Vec<f64>, String> {
        self.predict_data(data).map_err(|e| e.to_string())
    }

    fn n_params(&self) -> usize {
        MobTree::n_params(self)
    }
}

/// Optional forest preselection followed by tree growing.
#[derive(Debug, Clone, PartialEq)]
pub struct MobProcedure {
    pub forest: Option<MobForestConfig>,
    pub tree: MobConfig,
}

/// Result of one run of [`MobProcedure`].
#[derive(Debug, Clone, PartialEq)]
pub struct MobFit {
    pub importance: Option<ImportanceTable>,
    /// Moderators offered to the tree.
    pub selected: Vec<String>,
    pub tree: MobTree,
}

impl MobProcedure {
    /// Forest preselection with the forest drawing from `seed`. Returns all
    /// moderators when preselection is off. An empty selection is returned
    /// as is; the tree is then a single leaf.
    pub fn preselect(&self, data: &MobData, seed: u64) -> Result<(Option<ImportanceTable>, Vec<String>), ForestError> {
        match &self.forest {
            Some(fc) => {
                let forest = fit_forest(data, &MobForestConfig { seed, ..fc.clone() })?;
                let imp = permutation_importance(&forest, data);
                let selected = preselect(&imp).unwrap_or_default();
                Ok((Some(imp), selected))
            }
            None => Ok((None, data.moderator_names())),
        }
    }

    /// Grows the tree on the `selected` moderators with the tree's own
    /// Monte-Carlo seed.
    pub fn grow_selected(&self, data: &MobData, selected: &[String]) -> Result<MobTree, MobError> {
        grow(&data.select_moderators(selected)?, &self.tree)
    }

    pub fn run(&self, data: &MobData, seed: u64) -> Result<MobFit, String> {
        let (importance, selected) = self.preselect(data, seed).map_err(|e| e.to_string())?;
        let tree = self.grow_selected(data, &selected).map_err(|e| e.to_string())?;
        Ok(MobFit { importance, selected, tree })
    }
}

impl Procedure for MobProcedure {
    fn fit(&self, data: &MobData, seed: u64) -> Result<Box<dyn Fitted>, String> {
        Ok(Box::new(self.run(data, seed)?.tree))
    }
}

/// Predicts a fixed value without looking at the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantProcedure(pub f64);

impl Fitted for ConstantProcedure {
    fn predict(&self, data: &MobData) -> Result<Vec<f64>, String> {
        Ok(vec![self.0; data.n()])
    }

    fn n_params(&self) -> usize {
        0
    }
}

impl Procedure for ConstantProcedure {
    fn fit(&self, _: &MobData, _: u64) -> Result<Box<dyn Fitted>, String> {
        Ok(Box::new(*self))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub n_params: usize,
    /// Metrics on the bootstrap sample the model was fitted to.
    pub train: Metrics,
    /// Metrics of the same model on the original data.
    pub test: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub apparent: Metrics,
    pub corrected: Metrics,
    /// Mean of train minus test over the replicates that succeeded.
    pub optimism: Metrics,
    pub n_bootstrap: usize,
    pub n_skipped: usize,
    pub replicates: Vec<ReplicateRecord>,
}

fn evaluate(model: &dyn Fitted, data: &MobData) -> Result<Metrics, String> {
    let pred = model.predict(data)?;
    r2_rmse(&pred, &data.outcome, model.n_params()).map_err(|e| e.to_string())
}

/// Bootstrap optimism correction of the whole `procedure`. Replicate `b`
/// resamples rows with the seed derived from `(seed, b)` and refits with a
/// seed derived from the same stream. Replicates whose fit or evaluation
/// fails are skipped and counted.
pub fn bootstrap_bias_correct(
    data: &MobData,
    procedure: &dyn Procedure,
    n_bootstrap: usize,
    seed: u64,
) -> Result<ValidationReport, ValidateError> {
    let apparent_model = procedure.fit(data, seed).map_err(|_| ValidateError::AllReplicatesFailed)?;
    let apparent = {
        let pred = apparent_model.predict(data).map_err(|_| ValidateError::AllReplicatesFailed)?;
        r2_rmse(&pred, &data.outcome, apparent_model.n_params())?
    };
    let n = data.n();
    let results: Vec<Option<ReplicateRecord>> = (0..n_bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_from_seed(derive_seed(seed, b as u64));
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let boot = data.take_rows(&rows);
            let model = procedure.fit(&boot, rng.random()).ok()?;
            Some(ReplicateRecord { replicate: b, n_params: model.n_params(), train: evaluate(&*model, &boot).ok()?, test: evaluate(&*model, data).ok()? })
        })
        .collect();
    let replicates: Vec<ReplicateRecord> = results.into_iter().flatten().collect();
    if replicates.is_empty() {
        return Err(ValidateError::AllReplicatesFailed);
    }
    let k = replicates.len() as f64;
    let optimism = replicates
        .iter()
        .map(|r| r.train.zip(r.test, |a, b| a - b))
        .fold(Metrics { r2: 0.0, adj_r2: 0.0, rmse: 0.0 }, |acc, m| acc.zip(m, |a, b| a + b / k));
    Ok(ValidationReport {
        apparent,
        // For RMSE the train value is the smaller one, so subtracting the
        // (negative) optimism raises it.
        corrected: apparent.zip(optimism, |a, o| a - o),
        optimism,
        n_bootstrap,
        n_skipped: n_bootstrap - replicates.len(),
        replicates,
    })
}
