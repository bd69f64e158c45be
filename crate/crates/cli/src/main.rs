//! `cowqkd`: link budgets, parameter sweeps, filtering calibration,
//! stability runs and TCP key-exchange endpoints.
//!
//! Exit status: 0 on success, 1 on runtime failure, 2 on configuration
//! errors (including bad flags), 3 on calibration errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cowqkd::sweep::{FitObjective, SweepError};
use cowqkd::SweepMode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::Calibration(_) => 3,
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Config(_) | SweepError::Optics(_) | SweepError::Detection(_) => CliError::Config(e.to_string()),
            SweepError::Calibration(_) => CliError::Calibration(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cowqkd", version, about = "Coherent one-way QKD link model and key-exchange endpoints")]
struct Cli {
    /// TOML configuration with [sweep], [session] and [preset.<name>] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    show_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Analytic link budget and key rate at one operating point.
    Budget(BudgetArgs),
    /// Key rate over a parameter grid, as CSV.
    Sweep(SweepArgs),
    /// Fit the filtering percentage of presets to their reference key rates.
    Calibrate(CalibrateArgs),
    /// Key rate sampled over time at a fixed operating point.
    Stability(StabilityArgs),
    /// Listen for Bob and run Alice's side of a key exchange.
    ServeAlice(ServeArgs),
    /// Connect to Alice and run Bob's side of a key exchange.
    ServeBob(ServeArgs),
}

#[derive(Debug, Args)]
struct BudgetArgs {
    /// Start from a named preset's distance and attenuation.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    distance: Option<f64>,
    #[arg(long)]
    extra_db: Option<f64>,
    #[arg(long, default_value_t = 50.0)]
    dead_time_us: f64,
    #[arg(long, default_value_t = 2.0)]
    bias_v: f64,
    #[arg(long, default_value_t = 0.03125)]
    dr: f64,
    #[arg(long, default_value_t = 0.5)]
    cr: f64,
    /// Override the calibrated filtering percentage.
    #[arg(long)]
    filtering: Option<f64>,
    /// Add the dark count rate to the click rate.
    #[arg(long)]
    include_dark: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// analytic, monte-carlo or end-to-end.
    #[arg(long)]
    mode: Option<SweepMode>,
    /// Sweep the distance and attenuation of these presets.
    #[arg(long, value_delimiter = ',')]
    preset: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    distance: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    extra_db: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    dead_time_us: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    bias_v: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    dr: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    cr: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pulse pairs per point for simulated modes.
    #[arg(long)]
    pairs: Option<usize>,
    /// Allow disclose rates off the dyadic ladder.
    #[arg(long)]
    arbitrary_dr: bool,
    #[arg(long)]
    include_dark: bool,
    /// CSV destination; standard output when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Presets to fit; all when absent.
    #[arg(long, value_delimiter = ',')]
    preset: Vec<String>,
    /// minimax or least-squares.
    #[arg(long, default_value = "minimax")]
    objective: FitObjective,
}

#[derive(Debug, Args)]
struct StabilityArgs {
    #[arg(long, default_value = "80km")]
    preset: String,
    /// analytic or monte-carlo.
    #[arg(long, default_value = "monte-carlo")]
    mode: SweepMode,
    #[arg(long, default_value_t = 7200.0)]
    duration_s: f64,
    #[arg(long, default_value_t = 60.0)]
    interval_s: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Per-interval CSV destination.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Classical channel address (Alice listens, Bob connects).
    #[arg(long)]
    classical: String,
    /// Quantum channel address.
    #[arg(long)]
    quantum: String,
    /// Session seed; operating-system entropy when absent.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    distance: Option<f64>,
    #[arg(long)]
    dr: Option<f64>,
    #[arg(long)]
    cr: Option<f64>,
    #[arg(long)]
    block_len: Option<usize>,
    /// Write the final key here, with a `.manifest` sidecar.
    #[arg(long)]
    key_out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = commands::load_config(cli.config.as_deref())?;
    if cli.show_config {
        print!("{}", config.render());
        return Ok(());
    }
    match cli.command {
        None => Err(CliError::Config("no command given; see --help".into())),
        Some(Command::Budget(a)) => commands::budget(&config, a),
        Some(Command::Sweep(a)) => commands::sweep(&config, a),
        Some(Command::Calibrate(a)) => commands::calibrate(&config, a),
        Some(Command::Stability(a)) => commands::stability(&config, a),
        Some(Command::ServeAlice(a)) => commands::serve_alice(&config, a),
        Some(Command::ServeBob(a)) => commands::serve_bob(&config, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cowqkd: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
