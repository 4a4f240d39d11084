//! Stage orchestration: input, imputation, composite, preselection, tree,
//! validation. Every artifact is written to the output directory and listed
//! in `manifest.json` with its SHA-256.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::composite::{build_composites, diagnostics_csv, leave_one_out_composites, CompositeConfig, Occasion};
use crate::data::{read_csv, summarize, to_csv_string, ColumnRole, ColumnSpec, DataTable};
use crate::impute::{impute, ForestConfig};
use crate::mob::{MobConfig, MobData, MobTree};
use crate::mobforest::{ImportanceTable, MobForestConfig};
use crate::report::{render_density_svg, render_forest_plot_svg, render_importance_svg, render_tree_svg, DensityPanel};
use crate::rng::derive_seed;
use crate::synthetic::{generate, TrialGenConfig};
use crate::validate::{bootstrap_bias_correct, EffectSize, MobProcedure, ValidationReport};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    fn stage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        Self::Stage { stage, message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum InputConfig {
    /// Data drawn from `[synthetic]`.
    Synthetic,
    /// A CSV file plus a JSON schema (a list of column specs). Relative
    /// paths resolve against the config file's directory.
    Csv { path: PathBuf, schema: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreselectStage {
    pub enabled: bool,
    #[serde(flatten)]
    pub forest: MobForestConfig,
}

impl Default for PreselectStage {
    fn default() -> Self {
        Self { enabled: true, forest: MobForestConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidateStage {
    pub enabled: bool,
    pub n_bootstrap: usize,
    /// Keep the preselected moderators fixed across replicates instead of
    /// rerunning the forest in each one. Faster, but understates optimism.
    pub freeze_preselection: bool,
}

impl Default for ValidateStage {
    fn default() -> Self {
        Self { enabled: true, n_bootstrap: 200, freeze_preselection: false }
    }
}

/// Optional per-stage seed overrides. Unset seeds derive from the master
/// seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeedOverrides {
    pub synthetic: Option<u64>,
    pub impute: Option<u64>,
    /// Forest preselection and bootstrap validation.
    pub analysis: Option<u64>,
    /// Monte-Carlo null distribution of the stability tests.
    pub mob: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub input: InputConfig,
    /// Seed fields inside stage sections are ignored; see `seeds`.
    pub synthetic: TrialGenConfig,
    pub impute: ForestConfig,
    pub composite: CompositeConfig,
    pub preselect: PreselectStage,
    pub mob: MobConfig,
    pub validate: ValidateStage,
    pub seeds: SeedOverrides,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: PathBuf::from("moderatree-out"),
            input: InputConfig::Synthetic,
            synthetic: TrialGenConfig::default(),
            impute: ForestConfig::default(),
            composite: CompositeConfig::default(),
            preselect: PreselectStage::default(),
            mob: MobConfig::default(),
            validate: ValidateStage::default(),
            seeds: SeedOverrides::default(),
        }
    }
}

/// Seeds each stage actually uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StageSeeds {
    pub synthetic: u64,
    pub impute: u64,
    pub analysis: u64,
    pub mob: u64,
}

impl PipelineConfig {
    pub fn from_toml(s: &str) -> Result<Self, PipelineError> {
        toml::from_str(s).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Parses a config file and resolves relative input paths against its
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        if let InputConfig::Csv { path: csv, schema } = &mut config.input {
            let base = path.parent().unwrap_or(Path::new(""));
            for p in [csv, schema] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn seeds(&self) -> StageSeeds {
        let o = &self.seeds;
        StageSeeds {
            synthetic: o.synthetic.unwrap_or_else(|| derive_seed(self.seed, 1)),
            impute: o.impute.unwrap_or_else(|| derive_seed(self.seed, 2)),
            analysis: o.analysis.unwrap_or_else(|| derive_seed(self.seed, 3)),
            mob: o.mob.unwrap_or_else(|| derive_seed(self.seed, 4)),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |e: &dyn std::fmt::Display| PipelineError::Config(e.to_string());
        if matches!(self.input, InputConfig::Synthetic) {
            self.synthetic.validate().map_err(|e| cfg(&e))?;
        }
        self.impute.validate().map_err(|e| cfg(&e))?;
        self.mob.validate().map_err(|e| cfg(&e))?;
        if self.preselect.enabled {
            self.preselect.forest.validate(usize::MAX).map_err(|e| cfg(&e))?;
        }
        if self.validate.enabled && self.validate.n_bootstrap == 0 {
            return Err(PipelineError::Config("validate.n_bootstrap must be positive".into()));
        }
        if self.composite.scales.is_empty() {
            return Err(PipelineError::Config("composite needs at least one scale".into()));
        }
        Ok(())
    }

    /// The tree-building procedure shared by the main fit and every
    /// bootstrap replicate.
    pub fn procedure(&self) -> MobProcedure {
        MobProcedure {
            forest: self.preselect.enabled.then(|| self.preselect.forest.clone()),
            tree: MobConfig { seed: self.seeds().mob, ..self.mob.clone() },
        }
    }
}

/// Last stage to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StopAfter {
    Input,
    Impute,
    Tree,
    Validate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub stage: String,
}

struct Writer {
    dir: PathBuf,
    manifest: Vec<ManifestEntry>,
}

impl Writer {
    fn put(&mut self, stage: &'static str, name: &str, contents: &str) -> Result<(), PipelineError> {
        fs::write(self.dir.join(name), contents).map_err(|e| PipelineError::stage(stage, format!("writing {name}: {e}")))?;
        self.manifest.push(ManifestEntry {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(contents.as_bytes())),
            stage: stage.to_string(),
        });
        Ok(())
    }
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Everything a run produced, in memory.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seeds: StageSeeds,
    pub data: DataTable,
    pub imputed: Option<DataTable>,
    pub importance: Option<ImportanceTable>,
    pub selected: Vec<String>,
    pub tree: Option<MobTree>,
    pub validation: Option<ValidationReport>,
    pub manifest: Vec<ManifestEntry>,
}

#[derive(Serialize)]
struct LeafEffect<'a> {
    id: usize,
    n: usize,
    treatment_coefficient: f64,
    effect: &'a Option<EffectSize>,
}

#[derive(Serialize)]
struct ValidationArtifact<'a> {
    n_leaves: usize,
    n_params: usize,
    leaves: Vec<LeafEffect<'a>>,
    #[serde(flatten)]
    report: &'a ValidationReport,
}

fn composite_csv(table: &DataTable, baseline: &[f64], post: &[f64]) -> String {
    let id = table.columns_with_role(ColumnRole::Id).first().copied();
    let treat = table.treatment_column();
    let mut out = String::from("row,id,treatment,baseline_composite,post_composite\n");
    for i in 0..table.n_rows() {
        let id_cell = id.map(|j| table.format_cell(j, i, "")).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{}\n", i + 1, id_cell, table.values(treat)[i], baseline[i], post[i]));
    }
    out
}

fn load_input(config: &PipelineConfig, seeds: &StageSeeds) -> Result<DataTable, PipelineError> {
    match &config.input {
        InputConfig::Synthetic => {
            let gen = TrialGenConfig { seed: seeds.synthetic, ..config.synthetic.clone() };
            generate(&gen).map_err(|e| PipelineError::stage("input", e))
        }
        InputConfig::Csv { path, schema } => {
            let text = fs::read_to_string(schema)
                .map_err(|e| PipelineError::stage("input", format!("{}: {e}", schema.display())))?;
            let specs: Vec<ColumnSpec> =
                serde_json::from_str(&text).map_err(|e| PipelineError::stage("input", format!("schema: {e}")))?;
            read_csv(path, &specs).map_err(|e| PipelineError::stage("input", e))
        }
    }
}

/// Runs the stages up to `stop_after` and writes their artifacts.
pub fn run(config: &PipelineConfig, stop_after: StopAfter) -> Result<RunOutput, PipelineError> {
    config.validate()?;
    let seeds = config.seeds();
    fs::create_dir_all(&config.output_dir).map_err(|e| {
        PipelineError::stage("output", format!("{}: {e}", config.output_dir.display()))
    })?;
    let mut w = Writer { dir: config.output_dir.clone(), manifest: Vec::new() };

    let data = load_input(config, &seeds)?;
    w.put("input", "data.csv", &to_csv_string(&data))?;
    w.put("input", "schema.json", &json(&data.schema()))?;
    w.put("input", "summary.json", &json(&summarize(&data)))?;
    let mut out = RunOutput {
        seeds,
        data,
        imputed: None,
        importance: None,
        selected: Vec::new(),
        tree: None,
        validation: None,
        manifest: Vec::new(),
    };
    if stop_after >= StopAfter::Impute {
        let result = impute(&out.data, &ForestConfig { seed: seeds.impute, ..config.impute.clone() })
            .map_err(|e| PipelineError::stage("impute", e))?;
        w.put("impute", "imputed.csv", &to_csv_string(&result.completed))?;
        w.put("impute", "imputation_trace.csv", &result.trace_csv())?;
        out.imputed = Some(result.completed);
    }
    if stop_after >= StopAfter::Tree {
        let table = out.imputed.as_ref().expect("imputed");
        let comp = build_composites(table, &config.composite).map_err(|e| PipelineError::stage("composite", e))?;
        w.put("composite", "composite.csv", &composite_csv(table, &comp.baseline, &comp.post))?;
        w.put("composite", "composite_diagnostics.csv", &diagnostics_csv(&comp))?;
        let max = config.composite.max_score() as f64;
        let mut panels = vec![
            DensityPanel { title: "Baseline composite".into(), values: comp.baseline.clone(), x_max: max },
            DensityPanel { title: "Post composite".into(), values: comp.post.clone(), x_max: max },
        ];
        if comp.scale_names.len() > 1 {
            for (name, values) in comp.scale_names.iter().zip(leave_one_out_composites(&comp, Occasion::Post)) {
                panels.push(DensityPanel { title: format!("Post without {name}"), values, x_max: max - 10.0 });
            }
        }
        w.put("composite", "density.svg", &render_density_svg(&panels))?;

        let moderators: Vec<String> =
            table.columns_with_role(ColumnRole::Moderator).iter().map(|&j| table.spec(j).name.clone()).collect();
        let mob_data = MobData::from_table(table, &comp.post, &comp.baseline, &moderators)
            .map_err(|e| PipelineError::stage("preselect", e))?;
        let procedure = config.procedure();
        let (importance, selected) =
            procedure.preselect(&mob_data, seeds.analysis).map_err(|e| PipelineError::stage("preselect", e))?;
        if let Some(imp) = &importance {
            w.put("preselect", "importance.csv", &imp.to_csv())?;
            w.put("preselect", "importance.svg", &render_importance_svg(imp))?;
        }
        let tree = procedure.grow_selected(&mob_data, &selected).map_err(|e| PipelineError::stage("mob", e))?;
        w.put("mob", "tree.json", &tree.to_json())?;
        w.put("mob", "tree.svg", &render_tree_svg(&tree))?;
        w.put("mob", "forest_plot.svg", &render_forest_plot_svg(&tree))?;

        if stop_after >= StopAfter::Validate && config.validate.enabled {
            let report = if config.validate.freeze_preselection {
                let frozen = MobProcedure { forest: None, ..procedure.clone() };
                let sub = mob_data.select_moderators(&selected).map_err(|e| PipelineError::stage("validate", e))?;
                bootstrap_bias_correct(&sub, &frozen, config.validate.n_bootstrap, seeds.analysis)
            } else {
                bootstrap_bias_correct(&mob_data, &procedure, config.validate.n_bootstrap, seeds.analysis)
            }
            .map_err(|e| PipelineError::stage("validate", e))?;
            let leaves = tree
                .leaves()
                .into_iter()
                .map(|l| LeafEffect { id: l.id, n: l.n, treatment_coefficient: l.model.coefficients[2], effect: &l.effect })
                .collect();
            let artifact = ValidationArtifact { n_leaves: tree.n_leaves(), n_params: tree.n_params(), leaves, report: &report };
            w.put("validate", "validation.json", &json(&artifact))?;
            out.validation = Some(report);
        }
        out.importance = importance;
        out.selected = selected;
        out.tree = Some(tree);
    }
    let manifest = json(&w.manifest);
    fs::write(w.dir.join("manifest.json"), manifest).map_err(|e| PipelineError::stage("output", e))?;
    out.manifest = w.manifest;
    Ok(out)
}
