use std::path::PathBuf;

use clap::{Parser, Subcommand};

use mospred_cli::config::{Ablations, PipelineConfig, TransferMode};
use mospred_cli::pipeline;
use mospred_cli::CliResult;

/// MOS prediction pipeline: simulate rated speech features, pre-train,
/// train, refine, and evaluate a judge-conditioned quality predictor.
#[derive(Parser)]
#[command(name = "mospred", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat `key = value` config file; every key has a default.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for artifacts, reports, and manifests.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Train without the pre-trained encoder.
    #[arg(long, global = true)]
    no_dapt: bool,

    /// Train on the raw split without feature-space augmentation.
    #[arg(long, global = true)]
    no_aug: bool,

    /// Drop the score-distribution head.
    #[arg(long, global = true)]
    no_dist_head: bool,

    /// Drop the regression head.
    #[arg(long, global = true)]
    no_reg_head: bool,

    /// Replace each head's MLP with a single linear layer.
    #[arg(long, global = true)]
    linear_heads: bool,

    /// Skip the closed-form refinement stage.
    #[arg(long, global = true)]
    no_refine: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the simulated corpora (source, and optionally a
    /// shifted-domain target and a rating-free set).
    Simulate,
    /// Stage 1: masked-frame reconstruction pre-training of the encoder.
    Dapt,
    /// Stage 2: supervised training on the (augmented) train split.
    Train,
    /// Stage 3: fit the first-order refinement on train-split predictions.
    Refine,
    /// Score the held-out test split and write the report.
    Evaluate,
    /// Evaluate on the shifted-domain corpus.
    Transfer {
        /// zero_shot | few_shot | full
        #[arg(long)]
        mode: String,
    },
    /// Train, refine (unless --no-refine), and evaluate in one go,
    /// honoring the active ablation flags.
    Ablate,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut config = PipelineConfig::load(cli.config.as_deref(), cli.seed, cli.out.clone())?;
    config.enable_ablations(Ablations {
        no_dapt: cli.no_dapt,
        no_aug: cli.no_aug,
        no_dist_head: cli.no_dist_head,
        no_reg_head: cli.no_reg_head,
        linear_heads: cli.linear_heads,
        no_refine: cli.no_refine,
    });
    match cli.command {
        Command::Simulate => pipeline::cmd_simulate(&config),
        Command::Dapt => pipeline::cmd_dapt(&config),
        Command::Train => pipeline::cmd_train(&config),
        Command::Refine => pipeline::cmd_refine(&config),
        Command::Evaluate => pipeline::cmd_evaluate(&config),
        Command::Transfer { mode } => pipeline::cmd_transfer(&config, TransferMode::parse(&mode)?),
        Command::Ablate => pipeline::cmd_ablate(&config),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();

    // Usage mistakes are validation errors (exit 1); --help/--version
    // render through clap and exit 0.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };

    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code().into());
    }
}
