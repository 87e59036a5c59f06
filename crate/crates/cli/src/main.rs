//! `rince-lab` command-line entry point.
//!
//! Exit codes: 0 success, 1 verification failure, 2 bad config or usage,
//! 3 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "rince-lab", version, about = "Robust contrastive losses: checks, training, sweeps and bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config file; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (falls back to $RINCE_LAB_OUT, then ./rince-lab-out).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print progress.
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the invariant/property suite and print a pass/fail table.
    Verify {
        /// Smaller randomized checks.
        #[arg(long)]
        quick: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one configuration; writes history CSV, checkpoint and evaluation.
    Train(Common),
    /// Run a loss x noise-rate x seed grid; writes the results table.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads (results do not depend on this).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Three seeds, two noise rates and 30 epochs.
        #[arg(long)]
        quick: bool,
    },
    /// Check the Wasserstein dependency bound across random encoders.
    Bounds(Common),
    /// Run the noisy-risk bound suite on random threshold problems.
    Risk(Common),
    /// Aggregate sweep result tables into mean/std tables and plot data.
    Report {
        #[command(flatten)]
        common: Common,
        /// Results tables to aggregate (default: <out>/results.csv).
        inputs: Vec<PathBuf>,
    },
}

pub enum Failure {
    Verification,
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Verification => 1,
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl From<config::ConfigError> for Failure {
    fn from(e: config::ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<rince_lab::Error> for Failure {
    fn from(e: rince_lab::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Verify { quick, seed } => commands::verify(quick, seed),
        Command::Train(c) => commands::train(&c),
        Command::Sweep { common, jobs, quick } => commands::sweep(&common, jobs, quick),
        Command::Bounds(c) => commands::bounds(&c),
        Command::Risk(c) => commands::risk(&c),
        Command::Report { common, inputs } => commands::report(&common, &inputs),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Verification => eprintln!("error: verification failed"),
                Failure::Config(m) => eprintln!("error: {m}"),
                Failure::Runtime(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
