//! `aste` — train, evaluate, and inspect aspect-sentiment triplet extraction
//! models from the command line.
//!
//! Subcommands wrap the library stages end to end: `train` and `pretrain`
//! produce model archives, `eval` scores an archive and dumps predictions,
//! `tau` sweeps the pair-matching threshold, `stats` summarizes corpora, and
//! `viz` exports the projected span space of one sentence for plotting.

mod commands;
mod config;
mod manifest;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "aste",
    version,
    about = "Aspect-sentiment triplet extraction pipeline",
    after_help = config::key_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a gold triplet corpus.
    Train(commands::TrainArgs),
    /// Staged training: pseudo-labeled phase, mixed phase, then gold.
    Pretrain(commands::PretrainArgs),
    /// Evaluate an archived model and write per-sentence predictions.
    Eval(commands::EvalArgs),
    /// Sweep the pair-matching threshold and pick an operating point.
    Tau(commands::TauArgs),
    /// Print corpus statistics as key=value lines.
    Stats(commands::StatsArgs),
    /// Export one sentence's projected span space as a 2-D point table.
    Viz(commands::VizArgs),
}

fn main() -> std::process::ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => commands::cmd_train(args),
        Command::Pretrain(args) => commands::cmd_pretrain(args),
        Command::Eval(args) => commands::cmd_eval(args),
        Command::Tau(args) => commands::cmd_tau(args),
        Command::Stats(args) => commands::cmd_stats(args),
        Command::Viz(args) => commands::cmd_viz(args),
    };
    match result {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
