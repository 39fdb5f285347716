//! Batch driver for the emotion-classification engine.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical failure,
//! 4 shape/contract mismatch.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::RunConfig;
use emoclass_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "emoclass", version, about = "Multi-label emotion classification benchmark driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// key=value configuration file
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key (repeatable); overrides win over the file
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus statistics report
    Stats(Common),
    /// Train the TF-IDF binary-relevance logistic-regression baseline
    TrainLr(Common),
    /// Train the BiLSTM-with-attention classifier
    TrainBilstm(Common),
    /// Train the dense head on precomputed summary vectors
    TrainHead(Common),
    /// Evaluate a predictions file against a gold corpus
    Evaluate(Common),
    /// Tune per-label decision thresholds on validation predictions
    TuneThresholds(Common),
    /// Gradient and loss self-checks on toy shapes
    Gradcheck(Common),
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io { .. } | Error::Parse { .. } | Error::Validation(_) => 2,
        Error::NonFinite(_) | Error::Diverged { .. } => 3,
        Error::ShapeMismatch { .. } => 4,
    }
}

fn run(common: &Common, allowed: &[&str], f: impl Fn(&RunConfig) -> emoclass_core::Result<()>) -> ExitCode {
    let result = RunConfig::resolve(common.config.as_deref(), &common.overrides, allowed)
        .map(|mut cfg| {
            cfg.set_default("seed", "42".to_string());
            cfg
        })
        .and_then(|cfg| f(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Stats(c) => run(c, commands::STATS_KEYS, commands::cmd_stats),
        Command::TrainLr(c) => run(c, commands::TRAIN_LR_KEYS, commands::cmd_train_lr),
        Command::TrainBilstm(c) => run(c, commands::TRAIN_BILSTM_KEYS, commands::cmd_train_bilstm),
        Command::TrainHead(c) => run(c, commands::TRAIN_HEAD_KEYS, commands::cmd_train_head),
        Command::Evaluate(c) => run(c, commands::EVALUATE_KEYS, commands::cmd_evaluate),
        Command::TuneThresholds(c) => run(c, commands::TUNE_KEYS, commands::cmd_tune_thresholds),
        Command::Gradcheck(c) => run(c, commands::GRADCHECK_KEYS, commands::cmd_gradcheck),
    }
}
