use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use epmine::cli;
use epmine::config::ExperimentConfig;
use epmine::Error;

#[derive(Parser)]
#[command(name = "epmine", about = "Triplet-mining metric-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct CommonArgs {
    /// Experiment config file (flat key = value lines)
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file
    GenData(CommonArgs),
    /// Train an encoder and write checkpoint + training log
    Train(CommonArgs),
    /// Evaluate a checkpoint: Recall@K, neighbor stats, spread summary
    Eval(CommonArgs),
    /// Train one model per (strategy, group size) and tabulate Recall@1
    Sweep(CommonArgs),
    /// Dump one batch's similarity matrix and mined selections
    MineDebug(CommonArgs),
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(command: &Command) -> Result<(), Error> {
    match command {
        Command::GenData(a) => cli::cmd_gen_data(&load_config(a)?),
        Command::Train(a) => cli::cmd_train(&load_config(a)?),
        Command::Eval(a) => cli::cmd_eval(&load_config(a)?),
        Command::Sweep(a) => cli::cmd_sweep(&load_config(a)?),
        Command::MineDebug(a) => cli::cmd_mine_debug(&load_config(a)?),
    }
}

// 0 success, 2 config error, 3 data error, 4 numeric failure
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::KTooLarge { .. } => 2,
        Error::ParseError { .. }
        | Error::DimensionMismatch { .. }
        | Error::EmptyDataset
        | Error::TooFewClasses(_)
        | Error::Io(_) => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
