//! Heterogeneous treatment-effect trees for two-arm randomized trials.
//!
//! The pipeline builds a composite outcome from seven quantile-harmonized
//! scales, imputes missing data with iterative random forests, preselects
//! moderators with a forest of model-based trees, grows a model-based
//! recursive partition of a node-wise linear model, and validates the result
//! with bootstrap optimism correction.
//!
//! - [`data`]: mixed-type table, CSV I/O, summaries
//! - [`synthetic`]: seeded generator of trial-shaped data
//! - [`composite`]: skew-normal quantile binning and composite scores
//! - [`impute`]: random forests and iterative imputation
//! - [`linreg`]: node-wise least squares with score contributions
//! - [`mob`]: stability tests, split search, tree growing and pruning
//! - [`mobforest`]: forest of model-based trees and permutation importance
//! - [`validate`]: fit metrics, Cohen's d, bootstrap optimism correction
//! - [`report`]: JSON/CSV/SVG artifacts
//! - [`pipeline`]: configuration and stage orchestration

pub mod composite;
pub mod data;
pub mod impute;
pub mod linreg;
pub mod mob;
pub mod mobforest;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod synthetic;
pub mod validate;
