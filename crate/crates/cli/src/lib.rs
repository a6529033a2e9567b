//! Command-line front end for the lincert library: size and initialize
//! networks, train them under the convergence certificate, run the
//! statistical verification suites, check the deterministic bounds, and run
//! the natural-vs-corrupted label experiment. Every flag mirrors a config
//! key; a flat key=value file can supply any of them, with the command line
//! taking precedence. The process exits 0 exactly when every enabled
//! assertion passed.

pub mod cmd_bounds;
pub mod cmd_build;
pub mod cmd_compare;
pub mod cmd_experiment;
pub mod cmd_train;
pub mod cmd_verify;
pub mod config;
pub mod runs;

use clap::{Parser, Subcommand};
use config::{Overrides, RunConfig};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "lincert",
    version,
    about = "Linearly sized trainable networks: build, train, verify, bound, compare."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Size a network for the task and write its architecture record.
    Build {
        #[command(flatten)]
        over: Overrides,
    },
    /// Train the output layer by masked gradient descent under the
    /// convergence certificate.
    Train {
        #[command(flatten)]
        over: Overrides,
    },
    /// Statistical verification suites: rank, witness, concentration,
    /// moments, lipschitz, or all of them.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: cmd_verify::Suite,
        #[command(flatten)]
        over: Overrides,
    },
    /// Deterministic inequality checks: Jacobian growth, log volume,
    /// capacity, and the generalization-bound terms.
    Bounds {
        #[command(flatten)]
        over: Overrides,
    },
    /// Train the same initialization on clean and label-corrupted data and
    /// assert the qualitative ordering between the two runs.
    Experiment {
        #[command(flatten)]
        over: Overrides,
    },
    /// Tabulate two finished runs side by side.
    Compare {
        /// Run directory holding the clean run's train_trace.csv.
        #[arg(long)]
        natural: PathBuf,
        /// Run directory holding the corrupted run's train_trace.csv.
        #[arg(long)]
        corrupted: PathBuf,
        #[command(flatten)]
        over: Overrides,
    },
}

/// Parses the command line and runs the chosen subcommand; returns the
/// process exit code (0 success, 1 failed assertion or error, 2 usage).
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Build { over } => cmd_build::run(&RunConfig::resolve(&over)?),
        Command::Train { over } => cmd_train::run(&RunConfig::resolve(&over)?),
        Command::Verify { suite, over } => cmd_verify::run(&RunConfig::resolve(&over)?, suite),
        Command::Bounds { over } => cmd_bounds::run(&RunConfig::resolve(&over)?),
        Command::Experiment { over } => {
            let cfg = RunConfig::resolve(&over)?;
            let outcome = cmd_experiment::run(&cfg)?;
            cmd_experiment::print_summary(&outcome);
            cmd_experiment::check(&outcome)
        }
        Command::Compare {
            natural,
            corrupted,
            over,
        } => {
            let cfg = RunConfig::resolve(&over)?;
            cmd_compare::run(&natural, &corrupted, &cfg.out_dir)
        }
    }
}
