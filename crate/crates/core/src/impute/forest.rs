//! CART random forests for regression and classification.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("predictor columns have inconsistent lengths")]
    Shape,
    #[error("invalid forest config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Variables sampled per split; `None` picks ⌈√p⌉ for classification
    /// and ⌈p/3⌉ for regression.
    pub mtry: Option<usize>,
    /// Minimum rows per leaf; `None` picks 5 for regression, 1 for
    /// classification.
    pub min_leaf: Option<usize>,
    pub seed: u64,
    pub max_iterations: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 100, mtry: None, min_leaf: None, seed: 0, max_iterations: 10 }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::Config("n_trees must be at least 1".into()));
        }
        if self.mtry == Some(0) {
            return Err(ForestError::Config("mtry must be at least 1".into()));
        }
        if self.min_leaf == Some(0) {
            return Err(ForestError::Config("min_leaf must be at least 1".into()));
        }
        Ok(())
    }

    fn resolved(&self, p: usize, classification: bool) -> (usize, usize) {
        let default_mtry = if classification {
            (p as f64).sqrt().ceil() as usize
        } else {
            (p as f64 / 3.0).ceil() as usize
        };
        let mtry = self.mtry.unwrap_or(default_mtry).clamp(1, p.max(1));
        let min_leaf = self.min_leaf.unwrap_or(if classification { 1 } else { 5 });
        (mtry, min_leaf)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target<'a> {
    Regression(&'a [f64]),
    /// Class labels in `0..n_classes`.
    Classification { labels: &'a [usize], n_classes: usize },
}

impl Target<'_> {
    fn len(&self) -> usize {
        match self {
            Target::Regression(y) => y.len(),
            Target::Classification { labels, .. } => labels.len(),
        }
    }

    fn is_classification(&self) -> bool {
        matches!(self, Target::Classification { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    in_bag: Vec<u32>,
}

impl Tree {
    pub fn predict(&self, row: &dyn Fn(usize) -> f64) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf(v) => return *v,
                Node::Split { feature, threshold, left, right } => {
                    k = if row(*feature) <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Training rows not drawn into this tree's bootstrap sample.
    pub fn is_oob(&self, row: usize) -> bool {
        self.in_bag[row] == 0
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
    /// `Some(k)` for a k-class classifier.
    pub n_classes: Option<usize>,
    /// Out-of-bag MSE (regression) or misclassification rate.
    pub oob_error: Option<f64>,
}

impl RandomForest {
    /// Prediction for a row given by a feature accessor. Classification
    /// returns the majority class as `f64`, ties to the lowest index.
    pub fn predict_with(&self, row: &dyn Fn(usize) -> f64) -> f64 {
        self.aggregate(self.trees.iter().map(|t| t.predict(row)))
            .expect("forest has at least one tree")
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.predict_with(&|j| row[j])
    }

    fn aggregate(&self, votes: impl Iterator<Item = f64>) -> Option<f64> {
        match self.n_classes {
            None => {
                let (s, c) = votes.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
                (c > 0).then(|| s / c as f64)
            }
            Some(k) => {
                let mut counts = vec![0usize; k];
                let mut any = false;
                for v in votes {
                    counts[v as usize] += 1;
                    any = true;
                }
                any.then(|| argmax_lowest(&counts) as f64)
            }
        }
    }
}

fn argmax_lowest(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    target: &'a Target<'a>,
    mtry: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        match self.target {
            Target::Regression(y) => rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64,
            Target::Classification { labels, n_classes } => {
                let mut counts = vec![0usize; *n_classes];
                for &i in rows {
                    counts[labels[i]] += 1;
                }
                argmax_lowest(&counts) as f64
            }
        }
    }

    fn is_pure(&self, rows: &[usize]) -> bool {
        match self.target {
            Target::Regression(y) => rows.iter().all(|&i| y[i] == y[rows[0]]),
            Target::Classification { labels, .. } => rows.iter().all(|&i| labels[i] == labels[rows[0]]),
        }
    }

    /// Best (gain, feature, threshold) over one feature.
    fn best_on_feature(&self, rows: &[usize], f: usize, scratch: &mut Vec<(f64, usize)>) -> Option<(f64, f64)> {
        let col = &self.x[f];
        scratch.clear();
        scratch.extend(rows.iter().map(|&i| (col[i], i)));
        scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = scratch.len();
        if scratch[0].0 == scratch[n - 1].0 {
            return None;
        }
        let mut best: Option<(f64, f64)> = None;
        match self.target {
            Target::Regression(y) => {
                let total: f64 = scratch.iter().map(|&(_, i)| y[i]).sum();
                let mean = total / n as f64;
                // Centered sums keep the gain numerically stable.
                let mut left = 0.0;
                for k in 0..n - 1 {
                    left += y[scratch[k].1] - mean;
                    let nl = k + 1;
                    let nr = n - nl;
                    if scratch[k].0 == scratch[k + 1].0 || nl < self.min_leaf || nr < self.min_leaf {
                        continue;
                    }
                    let gain = left * left / nl as f64 + left * left / nr as f64;
                    if best.is_none_or(|(g, _)| gain > g) {
                        best = Some((gain, 0.5 * (scratch[k].0 + scratch[k + 1].0)));
                    }
                }
            }
            Target::Classification { labels, n_classes } => {
                let mut right = vec![0usize; *n_classes];
                for &(_, i) in scratch.iter() {
                    right[labels[i]] += 1;
                }
                let mut left = vec![0usize; *n_classes];
                let (mut sl, mut sr) = (0.0_f64, right.iter().map(|&c| (c * c) as f64).sum::<f64>());
                for k in 0..n - 1 {
                    let c = labels[scratch[k].1];
                    sl += (2 * left[c] + 1) as f64;
                    sr -= (2 * right[c] - 1) as f64;
                    left[c] += 1;
                    right[c] -= 1;
                    let nl = k + 1;
                    let nr = n - nl;
                    if scratch[k].0 == scratch[k + 1].0 || nl < self.min_leaf || nr < self.min_leaf {
                        continue;
                    }
                    // Gini decrease up to terms constant in the cut.
                    let gain = sl / nl as f64 + sr / nr as f64;
                    if best.is_none_or(|(g, _)| gain > g) {
                        best = Some((gain, 0.5 * (scratch[k].0 + scratch[k + 1].0)));
                    }
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(self.leaf_value(&rows)));
        if rows.len() < 2 * self.min_leaf || self.is_pure(&rows) {
            return id;
        }
        let p = self.x.len();
        let features = sample(rng, p, self.mtry.min(p));
        let mut scratch = Vec::with_capacity(rows.len());
        let mut best: Option<(f64, usize, f64)> = None;
        for f in features.iter() {
            if let Some((gain, thr)) = self.best_on_feature(&rows, f, &mut scratch) {
                let better = match best {
                    None => true,
                    Some((g, bf, _)) => gain > g || (gain == g && f < bf),
                };
                if better {
                    best = Some((gain, f, thr));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&i| self.x[feature][i] <= threshold);
        let left = self.grow(l, rng);
        let right = self.grow(r, rng);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }
}

fn fit_tree(x: &[Vec<f64>], target: &Target, mtry: usize, min_leaf: usize, seed: u64) -> Tree {
    let n = target.len();
    let mut rng = rng_from_seed(seed);
    let mut in_bag = vec![0u32; n];
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let i = rng.random_range(0..n);
        in_bag[i] += 1;
        rows.push(i);
    }
    rows.sort_unstable();
    let mut g = Grower { x, target, mtry, min_leaf, nodes: Vec::new() };
    g.grow(rows, &mut rng);
    Tree { nodes: g.nodes, in_bag }
}

/// Fits a forest of bootstrap CART trees. `x` holds predictor columns.
/// Tree `t` uses the seed derived from `(config.seed, t)`, so results do
/// not depend on the thread count.
pub fn fit_random_forest(
    x: &[Vec<f64>],
    target: &Target,
    config: &ForestConfig,
) -> Result<RandomForest, ForestError> {
    config.validate()?;
    let n = target.len();
    if n == 0 {
        return Err(ForestError::EmptyTrainingSet);
    }
    if x.iter().any(|c| c.len() != n) {
        return Err(ForestError::Shape);
    }
    let classification = target.is_classification();
    let (mtry, min_leaf) = config.resolved(x.len(), classification);
    let trees: Vec<Tree> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| fit_tree(x, target, mtry, min_leaf, derive_seed(config.seed, t as u64)))
        .collect();
    let n_classes = match target {
        Target::Regression(_) => None,
        Target::Classification { n_classes, .. } => Some(*n_classes),
    };
    let mut forest = RandomForest { trees, n_classes, oob_error: None };
    forest.oob_error = oob_error(&forest, x, target);
    Ok(forest)
}

fn oob_error(forest: &RandomForest, x: &[Vec<f64>], target: &Target) -> Option<f64> {
    let n = target.len();
    let mut loss = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        let row = |j: usize| x[j][i];
        let votes = forest.trees.iter().filter(|t| t.is_oob(i)).map(|t| t.predict(&row));
        let Some(pred) = forest.aggregate(votes) else { continue };
        count += 1;
        loss += match target {
            Target::Regression(y) => (pred - y[i]).powi(2),
            Target::Classification { labels, .. } => (pred as usize != labels[i]) as u8 as f64,
        };
    }
    (count > 0).then(|| loss / count as f64)
}
