use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod adjust;
mod error;
mod ingest;
mod simulate;
mod test_cmd;

use error::CliError;

/// Version of the JSON output layout.
pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

/// Exact tests for a group of coefficients in a Gaussian linear model.
#[derive(Debug, Parser)]
#[command(name = "ltest", version)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Test each named group of a CSV dataset.
    Test(test_cmd::TestArgs),
    /// Run power simulations from a TOML file.
    Simulate(simulate::SimulateArgs),
    /// Apply Holm or Benjamini-Hochberg to a list of p-values.
    Adjust(adjust::AdjustArgs),
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::usage(e.to_string()))?;
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match &cli.command {
        Command::Test(args) => test_cmd::run(args, &mut out),
        Command::Simulate(args) => simulate::run(args, &mut out),
        Command::Adjust(args) => adjust::run(args, &mut out),
    }?;
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ltest: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
