//! `headprune` command-line driver.
//!
//! Exit status: 0 on success, 64 for usage errors, 65 for malformed input
//! data, 78 for invalid configuration, 70 for runtime failures and 74 for
//! I/O failures.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use headprune::{Error, ErrorKind};

use commands::Ctx;
use config::FileConfig;

pub const EXIT_USAGE: u8 = 64;
pub const EXIT_PARSE: u8 = 65;
pub const EXIT_RUNTIME: u8 = 70;
pub const EXIT_IO: u8 = 74;
pub const EXIT_CONFIG: u8 = 78;

#[derive(Debug, Parser)]
#[command(
    name = "headprune",
    version,
    about = "Bias-aware attention-head pruning"
)]
pub struct Cli {
    /// Flat TOML file with default values; command-line flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Where to write the run manifest [default: next to the primary output]
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// More log output on stderr (repeatable)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the bias and perplexity regressors on a sample corpus
    TrainSurrogate(commands::train::TrainArgs),
    /// Search for a pruning mask with simulated annealing on the surrogates
    Anneal(commands::search::AnnealArgs),
    /// Anneal across several cost weights and tabulate the trade-off
    SweepEpsilon(commands::search::SweepArgs),
    /// Fairness-aware structured pruning from single-head effects
    Fasp(commands::baselines::FaspArgs),
    /// Score-ranked or random head selection
    Select(commands::baselines::SelectArgs),
    /// Side-by-side comparison of result files
    Compare(commands::report::CompareArgs),
    /// Bias and perplexity from scored prompt and loss tables
    Evaluate(commands::report::EvaluateArgs),
    /// Synthetic objectives with known optima
    #[command(subcommand)]
    Oracle(commands::oracle::OracleCommand),
    /// Re-run a command from its manifest and compare outputs
    Replay(commands::replay::ReplayArgs),
}

pub fn execute(cli: Cli, argv: Vec<String>) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let ctx = Ctx {
        file,
        config_path: cli.config,
        manifest: cli.manifest,
        argv,
    };
    match cli.command {
        Command::TrainSurrogate(a) => commands::train::run(&a, &ctx),
        Command::Anneal(a) => commands::search::anneal(&a, &ctx),
        Command::SweepEpsilon(a) => commands::search::sweep(&a, &ctx),
        Command::Fasp(a) => commands::baselines::fasp(&a, &ctx),
        Command::Select(a) => commands::baselines::select(&a, &ctx),
        Command::Compare(a) => commands::report::compare(&a, &ctx),
        Command::Evaluate(a) => commands::report::evaluate(&a, &ctx),
        Command::Oracle(c) => commands::oracle::run(&c, &ctx),
        Command::Replay(a) => commands::replay::run(&a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match (e, e.kind()) {
                (Error::Io(_), _) => EXIT_IO,
                (_, ErrorKind::Parse) => EXIT_PARSE,
                (_, ErrorKind::Config) => EXIT_CONFIG,
                (_, ErrorKind::Runtime) => EXIT_RUNTIME,
            };
        }
        if cause.is::<serde_json::Error>() {
            return EXIT_PARSE;
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_RUNTIME
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
