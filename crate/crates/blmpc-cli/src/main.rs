use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use blmpc_cli::commands::{cmd_oracle, cmd_plan, cmd_run, cmd_validate};

/// Sampling-based MPC with a natural-gradient Bayesian policy update.
#[derive(Parser)]
#[command(name = "blmpc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one planning round and write the posterior and planned control.
    Plan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the closed loop and write the full run record.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write exact-Bayes oracle posteriors for the synthetic task.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the property suites; nonzero exit on any failure.
    Validate {
        /// One of: duality, kl_bregman, fixed_point, estimators,
        /// oracle_triangle, convergence, integrator. Default: all.
        #[arg(long)]
        suite: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Plan { config, out } => cmd_plan(config, out),
        Command::Run { config, out } => cmd_run(config, out),
        Command::Oracle { config, out } => cmd_oracle(config, out),
        Command::Validate { suite } => cmd_validate(suite.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
