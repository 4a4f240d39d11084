//! Model-based recursive partitioning of the node-wise treatment model.

pub mod stability;
mod split;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use split::{find_cutpoint, SplitRule};
pub use stability::{select_split_variable, StabilityTestRecord, StatisticKind, TestTarget};

use crate::data::{ColumnKind, DataTable};
use crate::linreg::{design_row, fit_ols, score_contributions, LinregError, NodeModel, N_COEF};
use crate::rng::derive_seed;
use crate::validate::{cohens_d, EffectSize};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MobError {
    #[error("invalid MOB config: {0}")]
    Config(String),
    #[error("invalid MOB data: {0}")]
    Data(String),
    #[error("root model cannot be fitted: {0}")]
    RootModel(LinregError),
    #[error("row lacks a value for split variable `{0}`")]
    MissingSplitValue(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModeratorKind {
    Numeric,
    /// Values are level codes.
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moderator {
    pub name: String,
    pub kind: ModeratorKind,
    pub values: Vec<f64>,
}

/// Outcome, node-model covariates and moderators of a fully observed sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MobData {
    pub outcome: Vec<f64>,
    pub baseline: Vec<f64>,
    pub treatment: Vec<f64>,
    pub moderators: Vec<Moderator>,
}

impl MobData {
    pub fn new(
        outcome: Vec<f64>,
        baseline: Vec<f64>,
        treatment: Vec<f64>,
        moderators: Vec<Moderator>,
    ) -> Result<Self, MobError> {
        let n = outcome.len();
        if baseline.len() != n || treatment.len() != n || moderators.iter().any(|m| m.values.len() != n) {
            return Err(MobError::Data("all columns must have the same length".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&outcome) || !finite(&baseline) || !finite(&treatment) {
            return Err(MobError::Data("outcome and model covariates must be finite".into()));
        }
        if treatment.iter().any(|&t| t != 0.0 && t != 1.0) {
            return Err(MobError::Data("treatment must be 0/1".into()));
        }
        for m in &moderators {
            if !finite(&m.values) {
                return Err(MobError::Data(format!("moderator `{}` has missing values", m.name)));
            }
            if let ModeratorKind::Categorical { levels } = &m.kind {
                if m.values.iter().any(|&v| v < 0.0 || v.fract() != 0.0 || v as usize >= levels.len()) {
                    return Err(MobError::Data(format!("moderator `{}` has invalid level codes", m.name)));
                }
            }
        }
        Ok(Self { outcome, baseline, treatment, moderators })
    }

    /// Builds node data from a table: moderators are taken by name, binary
    /// columns become two-level categoricals.
    pub fn from_table(
        table: &DataTable,
        outcome: &[f64],
        baseline: &[f64],
        moderator_names: &[String],
    ) -> Result<Self, MobError> {
        let treatment = table.values(table.treatment_column()).to_vec();
        let mut moderators = Vec::with_capacity(moderator_names.len());
        for name in moderator_names {
            let j = table
                .column_index(name)
                .ok_or_else(|| MobError::Data(format!("unknown moderator `{name}`")))?;
            let kind = match &table.spec(j).kind {
                ColumnKind::Numeric => ModeratorKind::Numeric,
                ColumnKind::Binary => ModeratorKind::Categorical { levels: vec!["0".into(), "1".into()] },
                ColumnKind::Categorical { levels } => ModeratorKind::Categorical { levels: levels.clone() },
            };
            moderators.push(Moderator { name: name.clone(), kind, values: table.values(j).to_vec() });
        }
        Self::new(outcome.to_vec(), baseline.to_vec(), treatment, moderators)
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn moderator_names(&self) -> Vec<String> {
        self.moderators.iter().map(|m| m.name.clone()).collect()
    }

    pub fn take_rows(&self, rows: &[usize]) -> Self {
        let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            outcome: pick(&self.outcome),
            baseline: pick(&self.baseline),
            treatment: pick(&self.treatment),
            moderators: self
                .moderators
                .iter()
                .map(|m| Moderator { name: m.name.clone(), kind: m.kind.clone(), values: pick(&m.values) })
                .collect(),
        }
    }

    /// Keeps only the named moderators, in the given order.
    pub fn select_moderators(&self, names: &[String]) -> Result<Self, MobError> {
        let mut out = Self { moderators: Vec::new(), ..self.clone() };
        for name in names {
            let m = self
                .moderators
                .iter()
                .find(|m| &m.name == name)
                .ok_or_else(|| MobError::Data(format!("unknown moderator `{name}`")))?;
            out.moderators.push(m.clone());
        }
        Ok(out)
    }

    pub fn design(&self, i: usize) -> [f64; N_COEF] {
        design_row(self.baseline[i], self.treatment[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobConfig {
    pub alpha: f64,
    pub bonferroni: bool,
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
    pub trim: f64,
    pub mc_replicates: usize,
    pub seed: u64,
    pub test_target: TestTarget,
}

impl Default for MobConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            bonferroni: true,
            min_node_size: 10,
            max_depth: None,
            trim: 0.1,
            mc_replicates: 9999,
            seed: 0,
            test_target: TestTarget::AllParameters,
        }
    }
}

impl MobConfig {
    pub fn validate(&self) -> Result<(), MobError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(MobError::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.min_node_size < N_COEF + 1 {
            return Err(MobError::Config(format!("min_node_size must be at least {}", N_COEF + 1)));
        }
        if !(0.0..0.5).contains(&self.trim) {
            return Err(MobError::Config(format!("trim must lie in [0, 0.5), got {}", self.trim)));
        }
        if self.mc_replicates == 0 {
            return Err(MobError::Config("mc_replicates must be positive".into()));
        }
        Ok(())
    }
}

/// Five-number summary of post scores in one arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = p * (v.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Some(Self { n: v.len(), min: v[0], q1: q(0.25), median: q(0.5), q3: q(0.75), max: v[v.len() - 1] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub control: Option<BoxStats>,
    pub treatment: Option<BoxStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TooSmall,
    MaxDepth,
    NotSignificant,
    NoFeasibleSplit,
    Pruned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub variable: String,
    pub variable_index: usize,
    pub rule: SplitRule,
    pub statistic: f64,
    pub adjusted_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MobNode {
    pub id: usize,
    pub depth: usize,
    pub n: usize,
    pub model: NodeModel,
    pub effect: Option<EffectSize>,
    pub arms: ArmSummary,
    pub tests: Vec<StabilityTestRecord>,
    pub split: Option<Split>,
    pub children: Option<Box<[MobNode; 2]>>,
    pub stop_reason: Option<StopReason>,
}

impl MobNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    /// Nodes in preorder.
    pub fn preorder(&self) -> Vec<&MobNode> {
        let mut out = vec![self];
        if let Some(ch) = &self.children {
            out.extend(ch[0].preorder());
            out.extend(ch[1].preorder());
        }
        out
    }

    fn renumber(&mut self, next: &mut usize) {
        self.id = *next;
        *next += 1;
        if let Some(ch) = &mut self.children {
            ch[0].renumber(next);
            ch[1].renumber(next);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MobTree {
    pub root: MobNode,
    pub config: MobConfig,
    pub training_n: usize,
    pub moderators: Vec<String>,
}

impl MobTree {
    pub fn leaves(&self) -> Vec<&MobNode> {
        self.root.preorder().into_iter().filter(|n| n.is_leaf()).collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().len()
    }

    pub fn n_params(&self) -> usize {
        N_COEF * self.n_leaves()
    }

    pub fn depth(&self) -> usize {
        self.root.preorder().iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn node(&self, id: usize) -> Option<&MobNode> {
        self.root.preorder().into_iter().find(|n| n.id == id)
    }

    /// Routes a row to its leaf. `moderator` gives the value of the
    /// moderator at an index of [`MobTree::moderators`].
    pub fn route(&self, moderator: &dyn Fn(usize) -> f64) -> Result<&MobNode, MobError> {
        let mut node = &self.root;
        while let (Some(split), Some(children)) = (&node.split, &node.children) {
            let v = moderator(split.variable_index);
            if !v.is_finite() {
                return Err(MobError::MissingSplitValue(split.variable.clone()));
            }
            node = if split.rule.goes_left(v) { &children[0] } else { &children[1] };
        }
        Ok(node)
    }

    /// Predicted post composite and leaf id.
    pub fn predict(
        &self,
        moderator: &dyn Fn(usize) -> f64,
        baseline: f64,
        treatment: f64,
    ) -> Result<(f64, usize), MobError> {
        let leaf = self.route(moderator)?;
        Ok((leaf.model.predict(&design_row(baseline, treatment)), leaf.id))
    }

    /// Predictions for every row of `data`, whose moderators must include
    /// the tree's moderators by name.
    pub fn predict_data(&self, data: &MobData) -> Result<Vec<f64>, MobError> {
        let idx: Vec<usize> = self
            .moderators
            .iter()
            .map(|name| {
                data.moderators
                    .iter()
                    .position(|m| &m.name == name)
                    .ok_or_else(|| MobError::Data(format!("prediction data lacks `{name}`")))
            })
            .collect::<Result<_, _>>()?;
        (0..data.n())
            .map(|i| {
                self.predict(&|k| data.moderators[idx[k]].values[i], data.baseline[i], data.treatment[i])
                    .map(|p| p.0)
            })
            .collect()
    }

    /// Leaf id of each row.
    pub fn leaf_ids(&self, data: &MobData) -> Result<Vec<usize>, MobError> {
        let idx: Vec<usize> = self
            .moderators
            .iter()
            .map(|name| data.moderators.iter().position(|m| &m.name == name).unwrap_or(usize::MAX))
            .collect();
        (0..data.n())
            .map(|i| {
                self.route(&|k| data.moderators.get(idx[k]).map_or(f64::NAN, |m| m.values[i]))
                    .map(|n| n.id)
            })
            .collect()
    }
}

/// Seed of the Monte-Carlo null. It depends on the config seed only, so
/// every node of a given size reuses one simulation.
fn null_seed(config: &MobConfig) -> u64 {
    derive_seed(config.seed, 0x6d6f62)
}

/// Stability tests of every moderator on the node rows.
pub fn node_tests(data: &MobData, rows: &[usize], scores: &crate::linreg::ScoreMatrix, config: &MobConfig) -> Vec<StabilityTestRecord> {
    use stability::*;
    let n = rows.len();
    let target = config.test_target;
    let dim = target.dim();
    let (u, ridge) = decorrelate(scores, target);
    let mut records: Vec<StabilityTestRecord> = data
        .moderators
        .iter()
        .map(|m| {
            let x: Vec<f64> = rows.iter().map(|&i| m.values[i]).collect();
            let constant = x.iter().all(|&v| v == x[0]);
            let mut rec = StabilityTestRecord {
                moderator: m.name.clone(),
                statistic: 0.0,
                statistic_kind: StatisticKind::SupLm,
                raw_p: 1.0,
                adjusted_p: 1.0,
                df: None,
                trim: None,
                tested: !constant,
                ridge,
            };
            match &m.kind {
                ModeratorKind::Numeric => {
                    rec.trim = Some(config.trim);
                    if !constant {
                        let mut order: Vec<usize> = (0..n).collect();
                        order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
                        let (stat, cands) = sup_lm(&u, dim, &order, &x, config.trim);
                        rec.statistic = stat;
                        rec.raw_p = sup_lm_p_value(
                            stat,
                            &cands,
                            n,
                            dim,
                            config.trim,
                            config.mc_replicates,
                            null_seed(config),
                        );
                    }
                }
                ModeratorKind::Categorical { levels } => {
                    rec.statistic_kind = StatisticKind::ChiSquare;
                    if !constant {
                        let codes: Vec<usize> = x.iter().map(|&v| v as usize).collect();
                        let (stat, present) = categorical_statistic(&u, dim, &codes, levels.len());
                        let df = (present - 1) * dim;
                        rec.statistic = stat;
                        rec.df = Some(df);
                        rec.raw_p = chi_square_p(stat, df);
                    }
                }
            }
            rec
        })
        .collect();
    bonferroni(&mut records, config.bonferroni);
    records
}

fn fit_rows(data: &MobData, rows: &[usize]) -> Result<NodeModel, LinregError> {
    let y: Vec<f64> = rows.iter().map(|&i| data.outcome[i]).collect();
    let x: Vec<[f64; N_COEF]> = rows.iter().map(|&i| data.design(i)).collect();
    fit_ols(&y, &x)
}

fn arm_values(data: &MobData, rows: &[usize], arm: f64) -> Vec<f64> {
    rows.iter().filter(|&&i| data.treatment[i] == arm).map(|&i| data.outcome[i]).collect()
}

fn grow_node(
    data: &MobData,
    rows: Vec<usize>,
    model: NodeModel,
    depth: usize,
    config: &MobConfig,
    next_id: &mut usize,
) -> MobNode {
    let id = *next_id;
    *next_id += 1;
    let treated = arm_values(data, &rows, 1.0);
    let control = arm_values(data, &rows, 0.0);
    let mut node = MobNode {
        id,
        depth,
        n: rows.len(),
        effect: cohens_d(&treated, &control).ok(),
        arms: ArmSummary { control: BoxStats::from_values(&control), treatment: BoxStats::from_values(&treated) },
        model,
        tests: Vec::new(),
        split: None,
        children: None,
        stop_reason: None,
    };
    if rows.len() < 2 * config.min_node_size {
        node.stop_reason = Some(StopReason::TooSmall);
        return node;
    }
    if config.max_depth.is_some_and(|d| depth >= d) {
        node.stop_reason = Some(StopReason::MaxDepth);
        return node;
    }
    let x: Vec<[f64; N_COEF]> = rows.iter().map(|&i| data.design(i)).collect();
    let scores = score_contributions(&node.model, &x);
    node.tests = node_tests(data, &rows, &scores, config);
    let Some(var) = select_split_variable(&node.tests, config.alpha) else {
        node.stop_reason = Some(StopReason::NotSignificant);
        return node;
    };
    let Some((rule, left, right)) = find_cutpoint(data, &rows, var, config.min_node_size) else {
        node.stop_reason = Some(StopReason::NoFeasibleSplit);
        return node;
    };
    let (Ok(lm), Ok(rm)) = (fit_rows(data, &left), fit_rows(data, &right)) else {
        node.stop_reason = Some(StopReason::NoFeasibleSplit);
        return node;
    };
    node.split = Some(Split {
        variable: data.moderators[var].name.clone(),
        variable_index: var,
        rule,
        statistic: node.tests[var].statistic,
        adjusted_p: node.tests[var].adjusted_p,
    });
    let l = grow_node(data, left, lm, depth + 1, config, next_id);
    let r = grow_node(data, right, rm, depth + 1, config, next_id);
    node.children = Some(Box::new([l, r]));
    node
}

/// Grows a tree by recursive fit, test, select, cut and split.
pub fn grow(data: &MobData, config: &MobConfig) -> Result<MobTree, MobError> {
    config.validate()?;
    let n = data.n();
    if n < config.min_node_size {
        return Err(MobError::Data(format!("need at least {} rows, got {n}", config.min_node_size)));
    }
    let rows: Vec<usize> = (0..n).collect();
    let model = fit_rows(data, &rows).map_err(MobError::RootModel)?;
    let mut next_id = 1;
    let root = grow_node(data, rows, model, 0, config, &mut next_id);
    Ok(MobTree { root, config: config.clone(), training_n: n, moderators: data.moderator_names() })
}

fn prune_node(node: &mut MobNode, config: &MobConfig) {
    if let Some(children) = &mut node.children {
        prune_node(&mut children[0], config);
        prune_node(&mut children[1], config);
    } else {
        return;
    }
    let mut tests = node.tests.clone();
    stability::bonferroni(&mut tests, config.bonferroni);
    let keep = select_split_variable(&tests, config.alpha).is_some()
        && config.max_depth.is_none_or(|d| node.depth < d);
    node.tests = tests;
    if keep {
        if let Some(split) = &mut node.split {
            split.adjusted_p = node.tests[split.variable_index].adjusted_p;
        }
    } else {
        node.children = None;
        node.split = None;
        node.stop_reason = Some(StopReason::Pruned);
    }
}

/// Collapses inner nodes whose split no longer passes the significance
/// threshold of `config` (stored raw p-values, Bonferroni over the
/// moderators tested in that node). Node ids are renumbered in preorder.
pub fn prune(tree: &MobTree, config: &MobConfig) -> MobTree {
    let mut out = tree.clone();
    prune_node(&mut out.root, config);
    let mut next = 1;
    out.root.renumber(&mut next);
    out.config = MobConfig { alpha: config.alpha, bonferroni: config.bonferroni, max_depth: config.max_depth, ..out.config };
    out
}

#[derive(Debug, Serialize)]
struct ModelJson<'a> {
    b: &'a [f64; N_COEF],
    se: &'a [f64; N_COEF],
    t: &'a [f64; N_COEF],
    p: &'a [f64; N_COEF],
    n: usize,
    sigma2: f64,
    rss: f64,
}

#[derive(Debug, Serialize)]
struct SplitJson<'a> {
    var: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    cut: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    left_levels: Option<&'a [String]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    right_levels: Option<&'a [String]>,
    statistic: f64,
    adjusted_p: f64,
}

#[derive(Debug, Serialize)]
struct NodeJson<'a> {
    id: usize,
    kind: &'static str,
    depth: usize,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<SplitJson<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    children: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop_reason: Option<StopReason>,
    tests: &'a [StabilityTestRecord],
    model: ModelJson<'a>,
    effect: Option<&'a EffectSize>,
    arms: &'a ArmSummary,
}

#[derive(Debug, Serialize)]
struct TreeJson<'a> {
    training_n: usize,
    n_leaves: usize,
    moderators: &'a [String],
    config: &'a MobConfig,
    nodes: Vec<NodeJson<'a>>,
}

impl MobTree {
    /// Pretty JSON with a fixed key order and nodes listed in preorder.
    pub fn to_json(&self) -> String {
        let nodes = self
            .root
            .preorder()
            .into_iter()
            .map(|n| NodeJson {
                id: n.id,
                kind: if n.is_leaf() { "leaf" } else { "inner" },
                depth: n.depth,
                n: n.n,
                split: n.split.as_ref().map(|s| {
                    let (cut, ll, rl) = match &s.rule {
                        SplitRule::Numeric { cut } => (Some(*cut), None, None),
                        SplitRule::Categorical { left_levels, right_levels, .. } => {
                            (None, Some(left_levels.as_slice()), Some(right_levels.as_slice()))
                        }
                    };
                    SplitJson {
                        var: &s.variable,
                        cut,
                        left_levels: ll,
                        right_levels: rl,
                        statistic: s.statistic,
                        adjusted_p: s.adjusted_p,
                    }
                }),
                children: n.children.as_ref().map(|c| [c[0].id, c[1].id]),
                stop_reason: n.stop_reason,
                tests: &n.tests,
                model: ModelJson {
                    b: &n.model.coefficients,
                    se: &n.model.standard_errors,
                    t: &n.model.t_statistics,
                    p: &n.model.p_values,
                    n: n.model.n,
                    sigma2: n.model.sigma2_hat,
                    rss: n.model.rss,
                },
                effect: n.effect.as_ref(),
                arms: &n.arms,
            })
            .collect();
        let doc = TreeJson {
            training_n: self.training_n,
            n_leaves: self.n_leaves(),
            moderators: &self.moderators,
            config: &self.config,
            nodes,
        };
        serde_json::to_string_pretty(&doc).expect("tree serializes")
    }
}
