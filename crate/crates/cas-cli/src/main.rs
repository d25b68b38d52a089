//! `cas` — reproducible experiment runner for the calibrated adversarial
//! sampling simulator.

mod cli;
mod commands;
mod config;
mod output;

use clap::error::ErrorKind;
use clap::Parser;
use thiserror::Error;

use cli::{Cli, Command};

/// Command failures, each mapped to its exit code: usage and configuration
/// problems exit 1, numerical divergence exits 2, a failed check verdict
/// exits 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Divergence(String),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Divergence(_) => 2,
            CliError::CheckFailed(_) => 3,
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => commands::run(&args),
        Command::Compare(args) => commands::compare(&args),
        Command::TradeoffMatrix(args) => commands::tradeoff(&args),
        Command::RegretBench(args) => commands::regret_bench(&args),
        Command::ConvergenceCheck(args) => commands::convergence_check(&args),
        Command::EquilibriumCheck(args) => commands::equilibrium(&args),
        Command::DriftDemo(args) => commands::drift_demo(&args),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = dispatch(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
