//! `cogload`: workload estimation from the command line.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod error;
mod inspect;

use config::{Overrides, Settings};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "cogload", version, about = "Estimate mental workload from EEG, ECG and GSR recordings")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Calibration,
    Use,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic calibration and/or use sessions.
    Synth {
        #[arg(long, value_enum, default_value = "both")]
        kind: SynthKind,
    },
    /// Train a workload classifier on calibration data.
    Calibrate,
    /// Cross-validate the pipeline on calibration data.
    Cv {
        /// Shuffle the labels first (null check).
        #[arg(long)]
        shuffle_labels: bool,
    },
    /// Continuous workload index over a use session.
    Estimate,
    /// Label-permutation test of the per-task index profile.
    Permtest,
    /// Binomial chance threshold for `n` trials.
    Chance {
        #[arg(long)]
        n: u64,
    },
    /// Pretty-print any cogload file.
    Inspect { path: PathBuf },
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    let settings = Settings::resolve(&cli.overrides)?;
    match cli.command {
        Command::Synth { kind } => commands::synth(&settings, kind),
        Command::Calibrate => commands::calibrate(&settings),
        Command::Cv { shuffle_labels } => commands::cv(&settings, shuffle_labels),
        Command::Estimate => commands::estimate(&settings),
        Command::Permtest => commands::permtest(&settings),
        Command::Chance { n } => commands::chance(n, settings.alpha),
        Command::Inspect { path } => inspect::inspect(&path),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let err = CliError::validation(first.trim_start_matches("error: "));
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).expect("JSON values serialize");
            // A closed pipe (e.g. `| head`) is not a failure of the command.
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
