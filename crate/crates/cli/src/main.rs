use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use moderatree::pipeline::{run, PipelineConfig, PipelineError, StopAfter};

#[derive(Parser)]
#[command(name = "moderatree", version, about = "Treatment-effect moderator trees for two-arm trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load or generate the input table only.
    Generate(Common),
    /// Run every stage, including validation when enabled.
    Run(Common),
    /// Input and imputation.
    Impute(Common),
    /// Everything up to the tree, without validation.
    Tree(Common),
    /// Every stage, forcing bootstrap validation on.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config; defaults describe a synthetic 200-patient trial.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(common: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut config = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, stop, force_validate) = match &cli.command {
        Command::Generate(c) => (c, StopAfter::Input, false),
        Command::Impute(c) => (c, StopAfter::Impute, false),
        Command::Tree(c) => (c, StopAfter::Tree, false),
        Command::Run(c) => (c, StopAfter::Validate, false),
        Command::Validate(c) => (c, StopAfter::Validate, true),
    };
    let result = load(common).and_then(|mut config| {
        if force_validate {
            config.validate.enabled = true;
        }
        run(&config, stop).map(|out| (config, out))
    });
    match result {
        Ok((config, out)) => {
            if let Some(tree) = &out.tree {
                eprintln!("tree: {} leaves, {} moderators offered", tree.n_leaves(), out.selected.len());
            }
            if let Some(v) = &out.validation {
                eprintln!(
                    "R² apparent {:.4}, corrected {:.4}; RMSE apparent {:.3}, corrected {:.3}",
                    v.apparent.r2, v.corrected.r2, v.apparent.rmse, v.corrected.rmse
                );
            }
            println!("{}", config.output_dir.join("manifest.json").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                PipelineError::Config(_) => 2,
                PipelineError::Stage { .. } => 3,
            })
        }
    }
}
