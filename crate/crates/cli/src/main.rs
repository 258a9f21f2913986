//! Command-line front-end: statistics gathering, training, detection and
//! benchmarking over directories of PGM images.

mod cmd_bench;
mod cmd_detect;
mod cmd_stats;
mod cmd_synth;
mod cmd_train;
mod common;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "covdet",
    about = "Learn linear sliding-window detectors from stationary covariance statistics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Accumulate stationary statistics over a directory of images.
    Stats(cmd_stats::StatsArgs),
    /// Train a detector from statistics and positive examples.
    Train(cmd_train::TrainArgs),
    /// Score images with a detector and report detections.
    Detect(cmd_detect::DetectArgs),
    /// Time and measure the training back-ends.
    Bench(cmd_bench::BenchArgs),
    /// Generate a synthetic texture corpus with planted targets.
    Synth(cmd_synth::SynthArgs),
}

/// A failure with an explicit process exit code.
pub struct CliError {
    pub message: String,
    pub code: i32,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            code,
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(err: E) -> Self {
        let err: anyhow::Error = err.into();
        CliError {
            message: format!("{err:#}"),
            code: 1,
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Stats(args) => cmd_stats::run(args),
        Command::Train(args) => cmd_train::run(args),
        Command::Detect(args) => cmd_detect::run(args),
        Command::Bench(args) => cmd_bench::run(args),
        Command::Synth(args) => cmd_synth::run(args),
    };
    if let Err(err) = result {
        eprintln!("error: {}", err.message);
        std::process::exit(err.code);
    }
}
