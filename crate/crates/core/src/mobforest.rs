//! Forest of model-based trees for moderator preselection.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mob::{grow, MobConfig, MobData, MobError, MobTree};
use crate::rng::{derive_seed, derive_seed_path, rng_from_seed};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("invalid forest config: {0}")]
    Config(String),
    #[error("no moderator has positive importance")]
    EmptySelection,
    #[error(transparent)]
    Mob(#[from] MobError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Sampling {
    /// n rows drawn with replacement.
    Bootstrap,
    /// ⌊fraction·n⌋ rows drawn without replacement.
    Subsample { fraction: f64 },
    /// Every row, no out-of-bag set; importance is then evaluated in-sample.
    Full,
}

fn forest_tree_defaults() -> MobConfig {
    MobConfig { alpha: 0.2, mc_replicates: 999, ..MobConfig::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobForestConfig {
    pub n_trees: usize,
    /// `None` picks ⌈√m⌉.
    pub moderators_per_tree: Option<usize>,
    pub sampling: Sampling,
    /// Config of every tree. All trees share its Monte-Carlo seed so that
    /// equal-sized nodes reuse one null simulation.
    pub tree: MobConfig,
    pub seed: u64,
}

impl Default for MobForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 300,
            moderators_per_tree: None,
            sampling: Sampling::Subsample { fraction: 0.632 },
            tree: forest_tree_defaults(),
            seed: 0,
        }
    }
}

impl MobForestConfig {
    pub fn validate(&self, m: usize) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::Config("n_trees must be at least 1".into()));
        }
        if let Some(k) = self.moderators_per_tree {
            if k == 0 || k > m {
                return Err(ForestError::Config(format!("moderators_per_tree must lie in 1..={m}, got {k}")));
            }
        }
        if let Sampling::Subsample { fraction } = self.sampling {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(ForestError::Config(format!("subsample fraction must lie in (0, 1], got {fraction}")));
            }
        }
        self.tree.validate()?;
        Ok(())
    }

    fn per_tree(&self, m: usize) -> usize {
        self.moderators_per_tree.unwrap_or_else(|| (m as f64).sqrt().ceil() as usize).clamp(1, m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestTree {
    /// Indices into the forest's moderator list, ascending.
    pub moderators: Vec<usize>,
    /// Rows used for importance: out-of-bag rows, or all rows under
    /// [`Sampling::Full`].
    pub eval_rows: Vec<usize>,
    /// `None` when the resample could not support a root model.
    pub tree: Option<MobTree>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobForest {
    pub moderators: Vec<String>,
    pub trees: Vec<ForestTree>,
    pub config: MobForestConfig,
}

/// Grows `n_trees` MOB trees, each on a resample with its own moderator
/// subset. Tree `t` draws from the seed derived from `(seed, t)`.
pub fn fit_forest(data: &MobData, config: &MobForestConfig) -> Result<MobForest, ForestError> {
    let m = data.moderators.len();
    if m < 2 {
        return Err(ForestError::Config(format!("need at least 2 moderators, got {m}")));
    }
    config.validate(m)?;
    let n = data.n();
    let k = config.per_tree(m);
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(config.seed, t as u64));
            let mut moderators: Vec<usize> = sample(&mut rng, m, k).into_vec();
            moderators.sort_unstable();
            let (rows, eval_rows) = match config.sampling {
                Sampling::Bootstrap => {
                    let mut in_bag = vec![false; n];
                    let rows: Vec<usize> = (0..n)
                        .map(|_| {
                            let i = rng.random_range(0..n);
                            in_bag[i] = true;
                            i
                        })
                        .collect();
                    (rows, (0..n).filter(|&i| !in_bag[i]).collect())
                }
                Sampling::Subsample { fraction } => {
                    let size = ((fraction * n as f64).floor() as usize).clamp(1, n);
                    let mut rows = sample(&mut rng, n, size).into_vec();
                    rows.sort_unstable();
                    let mut in_bag = vec![false; n];
                    rows.iter().for_each(|&i| in_bag[i] = true);
                    (rows, (0..n).filter(|&i| !in_bag[i]).collect())
                }
                Sampling::Full => ((0..n).collect(), (0..n).collect()),
            };
            let names: Vec<String> = moderators.iter().map(|&j| data.moderators[j].name.clone()).collect();
            let sub = data.take_rows(&rows).select_moderators(&names).expect("names come from data");
            let tree = grow(&sub, &config.tree).ok();
            ForestTree { moderators, eval_rows, tree }
        })
        .collect();
    Ok(MobForest { moderators: data.moderator_names(), trees, config: config.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceEntry {
    pub name: String,
    pub importance: f64,
    pub rank: usize,
    pub selected: bool,
    /// Trees whose moderator subset contained this moderator.
    pub n_trees: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceTable {
    /// In moderator declaration order.
    pub entries: Vec<ImportanceEntry>,
}

impl ImportanceTable {
    /// Builds ranks and selection flags from raw importances. Ties rank by
    /// declaration order.
    pub fn from_importances(names: Vec<String>, importances: Vec<f64>, n_trees: Vec<usize>) -> Self {
        let mut order: Vec<usize> = (0..names.len()).collect();
        order.sort_by(|&a, &b| importances[b].total_cmp(&importances[a]).then(a.cmp(&b)));
        let mut rank = vec![0; names.len()];
        for (r, &j) in order.iter().enumerate() {
            rank[j] = r + 1;
        }
        let entries = names
            .into_iter()
            .enumerate()
            .map(|(j, name)| ImportanceEntry {
                name,
                importance: importances[j],
                rank: rank[j],
                selected: importances[j] > 0.0,
                n_trees: n_trees[j],
            })
            .collect();
        Self { entries }
    }

    pub fn get(&self, name: &str) -> Option<&ImportanceEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,importance,rank,selected\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{},{}\n", e.name, e.importance, e.rank, e.selected));
        }
        out
    }
}

fn tree_mse(tree: &MobTree, data: &MobData, rows: &[usize], cols: &[usize], override_col: Option<(usize, &[f64])>) -> f64 {
    let mut sse = 0.0;
    for (r, &i) in rows.iter().enumerate() {
        let value = |k: usize| match override_col {
            Some((c, vals)) if c == k => vals[r],
            _ => data.moderators[cols[k]].values[i],
        };
        let (pred, _) = tree.predict(&value, data.baseline[i], data.treatment[i]).expect("complete data");
        sse += (data.outcome[i] - pred).powi(2);
    }
    sse / rows.len() as f64
}

fn split_variables(tree: &MobTree) -> Vec<usize> {
    tree.root.preorder().iter().filter_map(|n| n.split.as_ref().map(|s| s.variable_index)).collect()
}

/// Mean increase of evaluation-set MSE after permuting each moderator,
/// averaged over the trees whose subset contains it. Moderators a tree
/// never splits on contribute exactly 0 for that tree.
pub fn permutation_importance(forest: &MobForest, data: &MobData) -> ImportanceTable {
    let m = forest.moderators.len();
    let per_tree: Vec<Vec<(usize, f64)>> = forest
        .trees
        .par_iter()
        .enumerate()
        .map(|(t, ft)| {
            let Some(tree) = &ft.tree else { return vec![] };
            let used = split_variables(tree);
            if ft.eval_rows.is_empty() {
                return ft.moderators.iter().map(|&j| (j, 0.0)).collect();
            }
            let base = if used.is_empty() { 0.0 } else { tree_mse(tree, data, &ft.eval_rows, &ft.moderators, None) };
            ft.moderators
                .iter()
                .enumerate()
                .map(|(k, &j)| {
                    if !used.contains(&k) {
                        return (j, 0.0);
                    }
                    let mut vals: Vec<f64> = ft.eval_rows.iter().map(|&i| data.moderators[j].values[i]).collect();
                    vals.shuffle(&mut rng_from_seed(derive_seed_path(forest.config.seed, &[1, t as u64, j as u64])));
                    let permuted = tree_mse(tree, data, &ft.eval_rows, &ft.moderators, Some((k, &vals)));
                    (j, permuted - base)
                })
                .collect()
        })
        .collect();
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for contributions in &per_tree {
        for &(j, v) in contributions {
            sums[j] += v;
            counts[j] += 1;
        }
    }
    let importances = (0..m).map(|j| if counts[j] > 0 { sums[j] / counts[j] as f64 } else { 0.0 }).collect();
    ImportanceTable::from_importances(forest.moderators.clone(), importances, counts)
}

/// Moderators with strictly positive importance, in declaration order.
pub fn preselect(table: &ImportanceTable) -> Result<Vec<String>, ForestError> {
    let chosen: Vec<String> = table.entries.iter().filter(|e| e.importance > 0.0).map(|e| e.name.clone()).collect();
    if chosen.is_empty() {
        Err(ForestError::EmptySelection)
    } else {
        Ok(chosen)
    }
}
