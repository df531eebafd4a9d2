//! `framefit`: simulate FDOA measurements, localize targets, run the
//! uniqueness diagnostics and estimate trajectories from time series.

mod commands;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use files::CliError;

#[derive(Debug, Parser)]
#[command(name = "framefit", version, about = "Frame-based FDOA target localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a measurement (or a time series) from a scenario file.
    Simulate(SimulateArgs),
    /// Grid search followed by damped Newton refinement.
    Localize(LocalizeArgs),
    /// Level set of the error function and the uniqueness certificate.
    Diagnose(DiagnoseArgs),
    /// Shooting search for a trajectory matching a time series.
    Track(TrackArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct NoiseArgs {
    /// Noise standard deviation (overrides the scenario).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Noise seed (overrides the scenario).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Comma-separated lower grid corner.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub grid_lower: Option<Vec<f64>>,
    /// Comma-separated upper grid corner.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub grid_upper: Option<Vec<f64>>,
    /// Comma-separated points per axis.
    #[arg(long, value_delimiter = ',')]
    pub grid_counts: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[command(flatten)]
    pub noise: NoiseArgs,
    /// Sample a constant-acceleration track over `[0, duration]` instead of
    /// a single instant.
    #[arg(long, requires = "steps")]
    pub duration: Option<f64>,
    /// Number of time steps of the track.
    #[arg(long, requires = "duration")]
    pub steps: Option<usize>,
    /// Comma-separated constant acceleration of the track.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, requires = "duration")]
    pub acceleration: Option<Vec<f64>>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Measurement file; simulated from the scenario when omitted.
    #[arg(long, conflicts_with_all = ["sigma", "seed"])]
    pub measurement: Option<PathBuf>,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Initial Newton step length in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub grad_tol: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Measurement file; simulated from the scenario when omitted.
    #[arg(long, conflicts_with_all = ["sigma", "seed"])]
    pub measurement: Option<PathBuf>,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Level-set threshold; defaults to the simulated noise energy.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Half-width of the certificate sample box around the scenario target.
    #[arg(long, default_value_t = 0.5)]
    pub cert_radius: f64,
    /// Certificate samples per axis.
    #[arg(long, default_value_t = 5)]
    pub cert_counts: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrackArgs {
    /// Scenario providing the sensor geometry.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Time-series file `{times, w}`.
    #[arg(long)]
    pub series: PathBuf,
    /// Initial-position grid.
    #[command(flatten)]
    pub grid: GridArgs,
    /// Comma-separated lower corner of the initial-velocity grid.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub vel_lower: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub vel_upper: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub vel_counts: Option<Vec<usize>>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Output directory; defaults to the one recorded in the manifest.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Localize(a) => commands::localize(&a),
        Command::Diagnose(a) => commands::diagnose(&a),
        Command::Track(a) => commands::track(&a),
        Command::Replay(a) => {
            let argv = commands::replay_argv(&a)?;
            let cli = parse(argv)?;
            if matches!(cli.command, Command::Replay(_)) {
                return Err(CliError::usage("a manifest cannot record a replay"));
            }
            dispatch(cli.command)
        }
    }
}

fn parse<I: IntoIterator<Item = String>>(argv: I) -> Result<Cli, CliError> {
    Cli::try_parse_from(argv).map_err(|e| {
        let text = e.to_string();
        let first = text.lines().next().unwrap_or("invalid arguments");
        CliError::usage(first.trim_start_matches("error: "))
    })
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
            eprintln!("{}", CliError::usage(first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code)
        }
    }
}
