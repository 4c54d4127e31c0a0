//! The `attune` command line: strict JSON configs, the command pipeline and
//! report emission.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod sweep;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{parse_config, parse_config_str, parse_sweep, parse_sweep_str, RunConfig, SweepSpec};
pub use error::{CliError, Result};
pub use sweep::{run_sweep, SweepOutcome};

#[derive(Debug, Parser)]
#[command(
    name = "attune",
    version,
    about = "Influence attribution, LDS evaluation and retraining-free selection of the regularization strength",
    after_long_help = report::OUTPUT_HELP
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset into <output-dir>/data
    GenData(RunArgs),
    /// Train the full-data model and save per-epoch checkpoints
    Train(RunArgs),
    /// Retrain on the sampled subsets (cached) and save their outputs
    Retrain(RunArgs),
    /// Score the validation set with the configured attributor
    Attribute(RunArgs),
    /// Linear Datamodeling Score of the configured attributor
    EvaluateLds(RunArgs),
    /// Select λ with the surrogate indicator; no retraining
    SelectLambda(RunArgs),
    /// Grid search over attributor hyperparameters; --config takes a sweep spec
    Sweep(RunArgs),
    /// Sufficient-condition diagnostic against exhaustive retraining (n <= 12)
    Diagnose(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON config (a sweep spec with `base` and `axes` for `sweep`)
    #[arg(long)]
    pub config: PathBuf,
    /// Run seed; overrides the config's `seed`
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's `output-dir`
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

fn apply(cfg: &mut RunConfig, args: &RunArgs) {
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(d) = &args.output_dir {
        cfg.output_dir = d.clone();
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let (Command::GenData(args)
    | Command::Train(args)
    | Command::Retrain(args)
    | Command::Attribute(args)
    | Command::EvaluateLds(args)
    | Command::SelectLambda(args)
    | Command::Sweep(args)
    | Command::Diagnose(args)) = &cli.command;
    if let Command::Sweep(_) = cli.command {
        let mut spec = parse_sweep(&args.config)?;
        apply(&mut spec.base, args);
        run_sweep(&spec)?;
        return Ok(());
    }
    let mut cfg = parse_config(&args.config)?;
    apply(&mut cfg, args);
    match cli.command {
        Command::GenData(_) => commands::gen_data(&cfg),
        Command::Train(_) => commands::train(&cfg).map(drop),
        Command::Retrain(_) => commands::retrain(&cfg).map(drop),
        Command::Attribute(_) => commands::attribute(&cfg).map(drop),
        Command::EvaluateLds(_) => commands::evaluate_lds(&cfg).map(drop),
        Command::SelectLambda(_) => commands::select_lambda(&cfg).map(drop),
        Command::Diagnose(_) => commands::diagnose(&cfg).map(drop),
        Command::Sweep(_) => unreachable!(),
    }
}
