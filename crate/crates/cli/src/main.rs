//! `qmem`: simulate and fit the characterization protocols of a
//! cavity–transmon quantum memory, and compute its quality-factor budgets.

mod commands;
mod config;
mod error;
mod output;
mod units;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Overrides;
use crate::error::CliError;
use crate::output::FileFormat;

#[derive(Parser)]
#[command(
    name = "qmem",
    about = "Digital twin of a cavity-transmon bosonic quantum memory: \
             loss budgets, T1/T2/nbar protocol simulation, decay fitting, Wigner maps",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory for generated files (default: the config's
    /// output dir, else "out")
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the shot-sampling seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override shots per point: a count, or "none" for exact probabilities
    #[arg(long, global = true)]
    shots: Option<String>,
    /// Dataset file format
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: FileFormat,
}

#[derive(Subcommand)]
enum Command {
    /// Compute per-channel and total Q from a loss-budget file
    Budget {
        /// Budget document (channels with participations/admittances)
        input: PathBuf,
    },
    /// Simulate a measurement protocol and write its dataset
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit a decay model to a dataset file
    Fit {
        /// Dataset written by `simulate` (csv or json)
        dataset: PathBuf,
        /// single_exp | coherent_vacuum | ramsey_fringe
        #[arg(long)]
        model: String,
    },
    /// Compute a Wigner quasi-probability map and plot
    Wigner {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run T1 (Fock and coherent), T2, and nbar for every configured device
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_shots_flag(text: &str) -> Result<Option<u64>, CliError> {
    if text.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    text.parse::<u64>().map(Some).map_err(|_| {
        CliError::Config(format!("--shots expects a count or 'none', got '{text}'"))
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let shots = match &cli.shots {
        Some(text) => Some(parse_shots_flag(text)?),
        None => None,
    };
    let over = Overrides {
        out_dir: cli.out.clone(),
        seed: cli.seed,
        shots,
        format: cli.format,
    };
    match &cli.command {
        Command::Budget { input } => commands::cmd_budget(input, &over),
        Command::Simulate { config } => commands::cmd_simulate(config, &over),
        Command::Fit { dataset, model } => commands::cmd_fit(dataset, model, &over),
        Command::Wigner { config } => commands::cmd_wigner(config, &over),
        Command::Pipeline { config } => commands::cmd_pipeline(config, &over),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(e.exit_code())
        }
    }
}
