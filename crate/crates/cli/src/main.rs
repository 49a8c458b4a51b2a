mod commands;
mod manifest;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{Failure, Outcome};

#[derive(Parser, Debug)]
#[command(name = "kouwdra", version, about = "Jump-diffusion calibration, simulation and WDRA policy training")]
pub struct Cli {
    /// Seed for every random draw of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory receiving all outputs (created if missing).
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,

    /// Also write SVG plots.
    #[arg(long, global = true)]
    pub plot: bool,

    /// Worker threads for simulation and rollouts.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Require an explicit --seed.
    #[arg(long, global = true)]
    pub test_mode: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit the jump-diffusion parameters to a CSV of daily log returns.
    Calibrate(CalibrateArgs),
    /// Simulate price paths.
    Simulate(SimulateArgs),
    /// Train a consumption-investment policy on a path file.
    Train(TrainArgs),
    /// Train CRRA and WDRA policies on the same paths and compare them.
    Compare(TrainArgs),
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// CSV with a single `log_return` column.
    pub returns: PathBuf,
    #[arg(long, default_value_t = 1.0 / 247.0)]
    pub dt: f64,
    #[arg(long, default_value_t = 4000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 0.02)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    /// Points on the density report grid.
    #[arg(long, default_value_t = 200)]
    pub grid: usize,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Use the built-in reference parameter vector.
    #[arg(long, conflicts_with = "params", required_unless_present = "params")]
    pub paper_params: bool,
    /// JSON file with mu, sigma, lambda, p, eta1, eta2, alpha.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = 100.0)]
    pub s0: f64,
    #[arg(long, default_value_t = 247)]
    pub days: usize,
    #[arg(long, default_value_t = 100)]
    pub paths: usize,
    #[arg(long, default_value_t = 1.0 / 247.0)]
    pub dt: f64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum UtilityKind {
    Crra,
    Wdra,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum WealthRef {
    Initial,
    BatchMean,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Path CSV written by `simulate`; a sibling `.json` sidecar is used when present.
    pub paths: PathBuf,
    /// Expected horizon in days; a mismatch with the path file is an error.
    #[arg(long)]
    pub days: Option<usize>,
    /// Step length used when the path file has no sidecar.
    #[arg(long, default_value_t = 1.0 / 247.0)]
    pub dt: f64,
    #[arg(long, value_enum, default_value_t = UtilityKind::Wdra)]
    pub utility: UtilityKind,
    /// CRRA coefficient.
    #[arg(long, default_value_t = 3.0)]
    pub rho: f64,
    #[arg(long)]
    pub b0: Option<f64>,
    #[arg(long)]
    pub b1: Option<f64>,
    #[arg(long)]
    pub b2: Option<f64>,
    #[arg(long, value_enum, default_value_t = WealthRef::Initial)]
    pub wealth_ref: WealthRef,
    #[arg(long, default_value_t = 0.5)]
    pub zeta: f64,
    /// Subjective discount rate.
    #[arg(long, default_value_t = 0.05)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.03)]
    pub r: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w0: f64,
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 50)]
    pub hidden: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub wealth_floor: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            log::warn!("optimizer did not converge; best iterate written");
            ExitCode::from(3)
        }
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
