mod commands;
mod error;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use log::LevelFilter;

use commands::{bench, eval, factor, project, synth, Context};

/// Nonnegative matrix factorization with rational-function spectra.
#[derive(Debug, Parser)]
#[command(name = "ratnmf", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Seed for every random choice
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
    /// JSON settings, or a manifest from an earlier run; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Only log errors
    #[arg(long, short, global = true, conflicts_with = "verbose")]
    quiet: bool,
    /// More logging (repeat for debug output)
    #[arg(long, short, global = true, action = ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic data set
    Synth(synth::SynthArgs),
    /// Project signals onto nonnegative rational functions
    Project(project::ProjectArgs),
    /// Factorize a data matrix
    Factor(factor::FactorArgs),
    /// Compare an estimate with the ground truth
    Eval(eval::EvalArgs),
    /// Run a benchmark sweep
    Bench(bench::BenchArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.global.quiet, cli.global.verbose) {
        (true, _) => LevelFilter::Error,
        (false, 0) => LevelFilter::Warn,
        (false, 1) => LevelFilter::Info,
        (false, _) => LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    let ctx = Context {
        argv: std::env::args().collect(),
        config: cli.global.config.clone(),
        seed: cli.global.seed,
        threads: cli.global.threads.map(|t| t as usize),
    };
    let result = match &cli.command {
        Command::Synth(a) => synth::run(&ctx, a),
        Command::Project(a) => project::run(&ctx, a),
        Command::Factor(a) => factor::run(&ctx, a),
        Command::Eval(a) => eval::run(&ctx, a),
        Command::Bench(a) => bench::run(&ctx, a),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("ratnmf: {e}");
            e.exit_code()
        }
    }
}
