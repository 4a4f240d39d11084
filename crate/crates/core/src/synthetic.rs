//! Seeded generator of two-arm trial datasets with a planted threshold
//! moderator of the treatment effect.
//!
//! Moderators are drawn from independent marginals (optionally with one
//! equicorrelated block of normal moderators). The post composite target is
//! `intercept + slope * baseline + effect * treatment + noise`, with
//! coefficients switching at the planted cutpoint. Outcome components are
//! produced from latent Gaussian scores through skew-normal marginals, so the
//! composite rebuilt by [`crate::composite`] tracks the target up to binning
//! noise.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composite::skew_normal::{norm_cdf, SkewNormalParams};
use crate::composite::CompositeConfig;
use crate::data::{ColumnKind, ColumnRole, ColumnSpec, DataError, DataTable};
use crate::rng::{derive_seed, derive_seed_path, rng_from_seed};

pub const TREATMENT_COLUMN: &str = "treatment";
pub const ID_COLUMN: &str = "id";

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Marginal {
    Normal {
        mean: f64,
        sd: f64,
        #[serde(default)]
        round: bool,
    },
    /// Gamma law parameterized by its mean and SD.
    Gamma { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
    Categorical { levels: Vec<String>, probs: Vec<f64> },
}

impl Marginal {
    fn column_kind(&self) -> ColumnKind {
        match self {
            Marginal::Normal { .. } | Marginal::Gamma { .. } => ColumnKind::Numeric,
            Marginal::Bernoulli { .. } => ColumnKind::Binary,
            Marginal::Categorical { levels, .. } => ColumnKind::Categorical { levels: levels.clone() },
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Marginal::Normal { mean, .. } | Marginal::Gamma { mean, .. } => *mean,
            Marginal::Bernoulli { p } => *p,
            Marginal::Categorical { probs, .. } => {
                probs.iter().enumerate().map(|(i, p)| i as f64 * p).sum()
            }
        }
    }

    pub fn sd(&self) -> f64 {
        match self {
            Marginal::Normal { sd, .. } | Marginal::Gamma { sd, .. } => *sd,
            Marginal::Bernoulli { p } => (p * (1.0 - p)).sqrt(),
            Marginal::Categorical { probs, .. } => {
                let m = self.mean();
                probs
                    .iter()
                    .enumerate()
                    .map(|(i, p)| p * (i as f64 - m).powi(2))
                    .sum::<f64>()
                    .sqrt()
            }
        }
    }

    fn validate(&self, name: &str) -> Result<(), SyntheticError> {
        let bad = |msg: &str| Err(SyntheticError::Config(format!("moderator `{name}`: {msg}")));
        match self {
            Marginal::Normal { mean, sd, .. } => {
                if !(mean.is_finite() && *sd > 0.0 && sd.is_finite()) {
                    return bad("normal needs finite mean and sd > 0");
                }
            }
            Marginal::Gamma { mean, sd } => {
                if !(*mean > 0.0 && *sd > 0.0 && mean.is_finite() && sd.is_finite()) {
                    return bad("gamma needs mean > 0 and sd > 0");
                }
            }
            Marginal::Bernoulli { p } => {
                if !(0.0..=1.0).contains(p) {
                    return bad("bernoulli p must lie in [0, 1]");
                }
            }
            Marginal::Categorical { levels, probs } => {
                if levels.is_empty() || levels.len() != probs.len() {
                    return bad("levels and probs must be non-empty and of equal length");
                }
                if probs.iter().any(|p| !(*p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                    return bad("probs must be non-negative and sum to 1");
                }
            }
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R, z: Option<f64>) -> f64 {
        match self {
            Marginal::Normal { mean, sd, round } => {
                let z = z.unwrap_or_else(|| rng.sample(StandardNormal));
                let v = mean + sd * z;
                if *round {
                    v.round()
                } else {
                    v
                }
            }
            Marginal::Gamma { mean, sd } => {
                let shape = (mean / sd).powi(2);
                let scale = sd * sd / mean;
                Gamma::new(shape, scale).expect("validated").sample(rng)
            }
            Marginal::Bernoulli { p } => (rng.random::<f64>() < *p) as u8 as f64,
            Marginal::Categorical { probs, .. } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return i as f64;
                    }
                }
                (probs.len() - 1) as f64
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeratorSpec {
    pub name: String,
    #[serde(flatten)]
    pub marginal: Marginal,
}

impl ModeratorSpec {
    pub fn new(name: &str, marginal: Marginal) -> Self {
        Self { name: name.to_string(), marginal }
    }
}

/// Equicorrelated block of normal moderators sharing one latent factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationBlock {
    pub moderators: Vec<String>,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEffect {
    pub moderator: String,
    /// Rows with moderator value ≤ cutpoint belong to the "below" side.
    pub cutpoint: f64,
    pub effect_below: f64,
    pub effect_above: f64,
}

/// Skew-normal marginal given by its first three moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSpec {
    pub mean: f64,
    pub sd: f64,
    pub skewness: f64,
}

impl MomentSpec {
    const fn new(mean: f64, sd: f64, skewness: f64) -> Self {
        Self { mean, sd, skewness }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeMarginal {
    pub scale: String,
    pub baseline: MomentSpec,
    pub post: MomentSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialGenConfig {
    pub n: usize,
    pub seed: u64,
    pub arm_ratio: f64,
    pub moderator_specs: Vec<ModeratorSpec>,
    pub correlation: Option<CorrelationBlock>,
    pub planted_effect: PlantedEffect,
    pub intercept_below: f64,
    pub intercept_above: f64,
    pub baseline_post_slope_below: f64,
    pub baseline_post_slope_above: f64,
    pub noise_sd: f64,
    pub missing_rate: f64,
    /// Loading of each baseline component on the shared baseline severity.
    pub baseline_loading: f64,
    /// Loading of each post component on the standardized post target.
    pub post_loading: f64,
    /// Share of participants reporting penetration at post-treatment.
    pub post_penetration_rate: f64,
    /// Marginals of the continuous outcome components. The dichotomous
    /// component is generated from `post_penetration_rate` and is 0 at
    /// baseline.
    pub outcome_marginals: Vec<OutcomeMarginal>,
}

impl Default for TrialGenConfig {
    fn default() -> Self {
        Self {
            n: 200,
            seed: 1,
            arm_ratio: 0.5,
            moderator_specs: trial_moderators(),
            correlation: None,
            planted_effect: PlantedEffect {
                moderator: "joint_dyadic_coping".into(),
                cutpoint: 13.0,
                effect_below: 4.08,
                effect_above: 13.24,
            },
            intercept_below: 3.435,
            intercept_above: 18.694,
            baseline_post_slope_below: 0.877,
            baseline_post_slope_above: 0.428,
            noise_sd: 9.0,
            missing_rate: 0.0,
            baseline_loading: 0.5,
            post_loading: 0.64,
            post_penetration_rate: 0.22,
            outcome_marginals: trial_outcome_marginals(),
        }
    }
}

impl TrialGenConfig {
    /// Same layout with equal effects on both sides of the cutpoint, so no
    /// moderator carries any instability.
    pub fn null_variant(mut self) -> Self {
        let pe = &mut self.planted_effect;
        let mean_effect = 0.5 * (pe.effect_below + pe.effect_above);
        pe.effect_below = mean_effect;
        pe.effect_above = mean_effect;
        self.intercept_below = self.intercept_above;
        self.baseline_post_slope_below = self.baseline_post_slope_above;
        self
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let err = |m: String| Err(SyntheticError::Config(m));
        if self.n < 2 {
            return err(format!("n must be at least 2, got {}", self.n));
        }
        if !(self.arm_ratio > 0.0 && self.arm_ratio < 1.0) {
            return err(format!("arm_ratio must lie in (0, 1), got {}", self.arm_ratio));
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return err(format!("noise_sd must be positive, got {}", self.noise_sd));
        }
        if !(0.0..0.5).contains(&self.missing_rate) {
            return err(format!("missing_rate must lie in [0, 0.5), got {}", self.missing_rate));
        }
        for (name, l) in [("baseline_loading", self.baseline_loading), ("post_loading", self.post_loading)] {
            if !(0.0..1.0).contains(&l) {
                return err(format!("{name} must lie in [0, 1), got {l}"));
            }
        }
        if !(self.post_penetration_rate > 0.0 && self.post_penetration_rate < 1.0) {
            return err("post_penetration_rate must lie in (0, 1)".into());
        }
        let mut names: Vec<&str> = self.moderator_specs.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return err("duplicate moderator names".into());
        }
        for m in &self.moderator_specs {
            m.marginal.validate(&m.name)?;
        }
        let planted = self
            .moderator_specs
            .iter()
            .find(|m| m.name == self.planted_effect.moderator)
            .ok_or_else(|| {
                SyntheticError::Config(format!(
                    "planted moderator `{}` is not declared",
                    self.planted_effect.moderator
                ))
            })?;
        if matches!(planted.marginal, Marginal::Categorical { .. }) {
            return err("planted moderator must be numeric or binary".into());
        }
        if let Some(block) = &self.correlation {
            if !(0.0..1.0).contains(&block.rho) {
                return err(format!("correlation rho must lie in [0, 1), got {}", block.rho));
            }
            for name in &block.moderators {
                match self.moderator_specs.iter().find(|m| &m.name == name) {
                    Some(ModeratorSpec { marginal: Marginal::Normal { .. }, .. }) => {}
                    Some(_) => return err(format!("correlated moderator `{name}` must be normal")),
                    None => return err(format!("correlated moderator `{name}` is not declared")),
                }
            }
        }
        for om in &self.outcome_marginals {
            for ms in [om.baseline, om.post] {
                if !(ms.sd > 0.0 && ms.mean.is_finite() && ms.skewness.is_finite()) {
                    return err(format!("outcome `{}` needs sd > 0", om.scale));
                }
            }
        }
        Ok(())
    }

    /// Column schema of the generated table.
    pub fn schema(&self) -> Vec<ColumnSpec> {
        let mut schema = vec![
            ColumnSpec::numeric(ID_COLUMN, ColumnRole::Id),
            ColumnSpec::binary(TREATMENT_COLUMN, ColumnRole::Treatment),
        ];
        for m in &self.moderator_specs {
            schema.push(ColumnSpec::new(m.name.clone(), m.marginal.column_kind(), ColumnRole::Moderator));
        }
        for (occasion, role) in [
            ("t1", ColumnRole::OutcomeComponentBaseline),
            ("t2", ColumnRole::OutcomeComponentPost),
        ] {
            schema.push(ColumnSpec::binary(format!("{PENETRATION}_{occasion}"), role));
            for om in &self.outcome_marginals {
                schema.push(ColumnSpec::numeric(format!("{}_{occasion}", om.scale), role));
            }
        }
        schema
    }

    /// Composite configuration matching the generated outcome columns.
    pub fn composite_config(&self) -> CompositeConfig {
        let base = CompositeConfig::trial_default();
        let mut scales = vec![];
        for s in base.scales {
            if s.name == PENETRATION || self.outcome_marginals.iter().any(|o| o.scale == s.name) {
                scales.push(s);
            }
        }
        CompositeConfig { scales }
    }
}

const PENETRATION: &str = "penetration";

fn direction_is_worse(scale: &str) -> bool {
    use crate::composite::Direction;
    CompositeConfig::trial_default()
        .scales
        .iter()
        .find(|s| s.name == scale)
        .is_some_and(|s| s.direction == Direction::HigherIsWorse)
}

/// The 32 baseline moderators of the trial with their published marginals.
pub fn trial_moderators() -> Vec<ModeratorSpec> {
    use Marginal::*;
    let normal = |mean, sd| Normal { mean, sd, round: false };
    let integer = |mean, sd| Normal { mean, sd, round: true };
    let gamma = |mean, sd| Gamma { mean, sd };
    let bern = |p| Bernoulli { p };
    vec![
        ModeratorSpec::new("age", integer(28.75, 8.89)),
        ModeratorSpec::new("german_nationality", bern(0.91)),
        ModeratorSpec::new(
            "education",
            Categorical {
                levels: vec!["low".into(), "middle".into(), "high".into()],
                probs: vec![0.02, 0.445, 0.535],
            },
        ),
        ModeratorSpec::new("married", bern(0.255)),
        ModeratorSpec::new("children", bern(0.08)),
        ModeratorSpec::new("previous_treatment", bern(0.32)),
        ModeratorSpec::new("psychotherapy_experience", bern(0.36)),
        ModeratorSpec::new("online_training_experience", bern(0.07)),
        ModeratorSpec::new("gpppd_duration", gamma(8.02, 7.06)),
        ModeratorSpec::new("lifelong_gpppd", bern(0.38)),
        ModeratorSpec::new("intercourse_attempts", gamma(6.95, 16.74)),
        ModeratorSpec::new("sexual_abuse", bern(0.1011)),
        ModeratorSpec::new("control_cognitions", normal(2.73, 1.45)),
        ModeratorSpec::new("catastrophic_pain_cognitions", normal(4.12, 1.24)),
        ModeratorSpec::new("self_image_cognitions", normal(3.38, 1.37)),
        ModeratorSpec::new("genital_incompatibility_cognitions", normal(3.16, 1.77)),
        ModeratorSpec::new("positive_cognitions", normal(2.25, 1.16)),
        ModeratorSpec::new("sexual_desire", normal(3.31, 1.11)),
        ModeratorSpec::new("arousal", normal(3.96, 1.52)),
        ModeratorSpec::new("lubrication", normal(3.95, 1.68)),
        ModeratorSpec::new("orgasm", normal(3.81, 1.82)),
        ModeratorSpec::new("noncoital_insertion_partner", gamma(0.50, 0.64)),
        ModeratorSpec::new("partnership_duration", gamma(6.17, 5.98)),
        ModeratorSpec::new("delegated_dyadic_coping", integer(7.07, 1.94)),
        ModeratorSpec::new("joint_dyadic_coping", integer(17.13, 3.84)),
        ModeratorSpec::new("evaluation_dyadic_coping", integer(7.47, 1.79)),
        ModeratorSpec::new("relationship_quality", integer(21.03, 4.30)),
        ModeratorSpec::new("relationship_happiness", normal(3.68, 1.07)),
        ModeratorSpec::new("self_esteem", integer(20.77, 5.82)),
        ModeratorSpec::new("generalized_anxiety", gamma(7.30, 4.06)),
        ModeratorSpec::new("trait_anxiety", integer(50.93, 13.87)),
        ModeratorSpec::new("well_being", normal(50.28, 17.47)),
    ]
}

/// Pure-noise standard normal moderators `noise_1 ..= noise_k`.
pub fn noise_moderators(k: usize) -> Vec<ModeratorSpec> {
    (1..=k)
        .map(|i| ModeratorSpec::new(&format!("noise_{i}"), Marginal::Normal { mean: 0.0, sd: 1.0, round: false }))
        .collect()
}

/// Baseline and post marginals of the six continuous outcome components,
/// pooled over arms. Skewness values are not published and are set to mild
/// values in the direction of each scale's floor or ceiling.
pub fn trial_outcome_marginals() -> Vec<OutcomeMarginal> {
    let om = |scale: &str, baseline, post| OutcomeMarginal { scale: scale.into(), baseline, post };
    vec![
        om("self_insertion", MomentSpec::new(1.11, 0.925, 0.4), MomentSpec::new(1.495, 0.93, 0.0)),
        om("pain", MomentSpec::new(1.625, 1.03, 0.5), MomentSpec::new(2.33, 1.37, 0.2)),
        om("pain_interference", MomentSpec::new(4.63, 0.51, -0.9), MomentSpec::new(4.045, 0.90, -0.5)),
        om("coital_fear", MomentSpec::new(11.075, 3.12, -0.3), MomentSpec::new(9.215, 3.37, 0.0)),
        om("noncoital_fear", MomentSpec::new(11.59, 4.24, 0.2), MomentSpec::new(10.895, 4.10, 0.3)),
        om("satisfaction", MomentSpec::new(3.50, 1.35, 0.0), MomentSpec::new(3.73, 1.25, -0.2)),
    ]
}

fn skew_normal(ms: MomentSpec) -> SkewNormalParams {
    SkewNormalParams::from_moments(ms.mean, ms.sd, ms.skewness).expect("validated moments")
}

/// Bin of a uniform score on the 11-point grid.
fn uniform_bin(u: f64) -> f64 {
    (u * 11.0).floor().min(10.0)
}

/// Generates a dataset. Deterministic for a fixed config.
pub fn generate(config: &TrialGenConfig) -> Result<DataTable, SyntheticError> {
    config.validate()?;
    let n = config.n;
    let seed = config.seed;

    // Moderators: one RNG stream per moderator so adding columns leaves the
    // others unchanged.
    let factor: Vec<f64> = {
        let mut rng = rng_from_seed(derive_seed(seed, 10));
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    };
    let mut moderator_cols = Vec::with_capacity(config.moderator_specs.len());
    for (k, m) in config.moderator_specs.iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed_path(seed, &[1, k as u64]));
        let rho = config
            .correlation
            .as_ref()
            .filter(|b| b.moderators.contains(&m.name))
            .map(|b| b.rho);
        let col: Vec<f64> = (0..n)
            .map(|i| {
                let z = rho.map(|rho| {
                    let e: f64 = rng.sample(StandardNormal);
                    rho.sqrt() * factor[i] + (1.0 - rho).sqrt() * e
                });
                m.marginal.sample(&mut rng, z)
            })
            .collect();
        moderator_cols.push(col);
    }

    // Complete randomization with round(n * arm_ratio) treated.
    let n_treated = ((n as f64 * config.arm_ratio).round() as usize).clamp(1, n - 1);
    let mut treatment: Vec<f64> = (0..n).map(|i| (i < n_treated) as u8 as f64).collect();
    treatment.shuffle(&mut rng_from_seed(derive_seed(seed, 2)));

    let planted_idx = config
        .moderator_specs
        .iter()
        .position(|m| m.name == config.planted_effect.moderator)
        .expect("validated");
    let below: Vec<bool> = moderator_cols[planted_idx]
        .iter()
        .map(|&v| v <= config.planted_effect.cutpoint)
        .collect();

    let mut rng = rng_from_seed(derive_seed(seed, 3));
    let lb = config.baseline_loading;
    let lp = config.post_loading;
    let n_cont = config.outcome_marginals.len();

    // Baseline: shared severity, oriented so that a high latent score is a
    // mild presentation.
    let mut baseline_u = vec![vec![0.0; n]; n_cont];
    let mut baseline_hat = vec![0.0; n];
    for i in 0..n {
        let eta: f64 = rng.sample(StandardNormal);
        for s in 0..n_cont {
            let e: f64 = rng.sample(StandardNormal);
            let u = norm_cdf(lb * eta + (1.0 - lb * lb).sqrt() * e);
            baseline_u[s][i] = u;
            baseline_hat[i] += uniform_bin(u);
        }
    }

    let target: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b, d) = if below[i] {
                (config.intercept_below, config.baseline_post_slope_below, config.planted_effect.effect_below)
            } else {
                (config.intercept_above, config.baseline_post_slope_above, config.planted_effect.effect_above)
            };
            let e: f64 = rng.sample(StandardNormal);
            a + b * baseline_hat[i] + d * treatment[i] + config.noise_sd * e
        })
        .collect();
    let mean = target.iter().sum::<f64>() / n as f64;
    let sd = (target.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    let eta: Vec<f64> = target
        .iter()
        .map(|t| if sd > 0.0 { (t - mean) / sd } else { 0.0 })
        .collect();

    let resid = (1.0 - lp * lp).sqrt();
    let threshold = statrs_quantile(1.0 - config.post_penetration_rate);
    let mut post_u = vec![vec![0.0; n]; n_cont];
    let mut penetration_t2 = vec![0.0; n];
    for i in 0..n {
        let e: f64 = rng.sample(StandardNormal);
        penetration_t2[i] = ((lp * eta[i] + resid * e) > threshold) as u8 as f64;
        for s in 0..n_cont {
            let e: f64 = rng.sample(StandardNormal);
            post_u[s][i] = norm_cdf(lp * eta[i] + resid * e);
        }
    }

    let schema = config.schema();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(schema.len());
    columns.push((1..=n).map(|i| i as f64).collect());
    columns.push(treatment);
    columns.extend(moderator_cols);
    for (is_baseline, occasion_u, penetration) in
        [(true, &baseline_u, vec![0.0; n]), (false, &post_u, penetration_t2)]
    {
        columns.push(penetration);
        for (s, om) in config.outcome_marginals.iter().enumerate() {
            let spec = if is_baseline { om.baseline } else { om.post };
            let dist = skew_normal(spec);
            let worse = direction_is_worse(&om.scale);
            columns.push(
                occasion_u[s]
                    .iter()
                    .map(|&u| dist.quantile(if worse { 1.0 - u } else { u }))
                    .collect(),
            );
        }
    }
    let table = DataTable::from_columns(schema, columns)?;
    if config.missing_rate > 0.0 {
        Ok(mask_mcar(&table, config.missing_rate, derive_seed(seed, 4)).masked)
    } else {
        Ok(table)
    }
}

fn statrs_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

/// A masked table with the original values kept as ground truth.
#[derive(Debug, Clone)]
pub struct McarMask {
    pub masked: DataTable,
    pub truth: DataTable,
    /// `mask[col][row]` is true for cells masked by this call.
    pub mask: Vec<Vec<bool>>,
}

impl McarMask {
    pub fn masked_cells(&self) -> usize {
        self.mask.iter().flatten().filter(|&&m| m).count()
    }
}

/// Masks every non-treatment, non-id cell independently with probability
/// `rate`. Cells already missing stay missing.
pub fn mask_mcar(table: &DataTable, rate: f64, seed: u64) -> McarMask {
    assert!((0.0..1.0).contains(&rate), "rate must lie in [0, 1)");
    let mut rng = rng_from_seed(seed);
    let (schema, mut columns, mut missing) = table.clone().into_parts();
    let mut mask = vec![vec![false; table.n_rows()]; schema.len()];
    for (j, spec) in schema.iter().enumerate() {
        if matches!(spec.role, ColumnRole::Treatment | ColumnRole::Id) {
            continue;
        }
        for i in 0..table.n_rows() {
            // Draw for every cell so the mask does not depend on prior
            // missingness.
            let hit = rng.random::<f64>() < rate;
            if hit && !missing[j][i] {
                missing[j][i] = true;
                columns[j][i] = f64::NAN;
                mask[j][i] = true;
            }
        }
    }
    let masked = DataTable::new(schema, columns, missing).expect("masking preserves validity");
    McarMask { masked, truth: table.clone(), mask }
}
