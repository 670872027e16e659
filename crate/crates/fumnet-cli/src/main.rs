//! `fumnet` command-line interface.
//!
//! Exit codes: 0 success, 1 runtime or check failure, 2 usage/config
//! error, 3 data error.

mod commands;
mod merge;

use clap::{Parser, Subcommand};

use commands::{CliError, EvalArgs, GenSyntheticArgs, GradcheckArgs, TrainArgs};

#[derive(Parser)]
#[command(
    name = "fumnet",
    version,
    about = "Few-shot classification with forget-update modules over channel vector sequences",
    after_help = "Flags override --config file values, which override built-in defaults."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train a model episodically and keep the best-on-validation
    /// checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint over test episodes (600 by default)
    Eval(EvalArgs),
    /// Run the diagnostic battery: gradient checks, causality,
    /// receptive field, shape chain
    Gradcheck(GradcheckArgs),
    /// Materialize a synthetic dataset in the folder layout with split
    /// files
    GenSynthetic(GenSyntheticArgs),
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Gradcheck(args) => commands::gradcheck(args),
        Command::GenSynthetic(args) => commands::gen_synthetic(args),
    };
    match result {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(match err {
                CliError::Usage(_) => 2,
                CliError::Data(_) => 3,
                CliError::Runtime(_) => 1,
                CliError::CheckFailed => 1,
            });
        }
    }
}
