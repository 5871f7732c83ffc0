//! `switchstab` command-line tool.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0    | success |
//! | 1    | invalid model file, solver did not converge, or simulation failed |
//! | 2    | Riccati solve converged but the pairwise gain condition fails |
//! | 64   | usage error (bad flags, `dt` larger than `T`, bad `SWITCHSTAB_THREADS`) |

mod commands;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{diagnose, simulate, solve, validate};
pub use output::Console;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONDITION: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "SWITCHSTAB_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "switchstab",
    version,
    about = "Filter-based stabilization of hidden-mode switching LQ systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Output directory.
    #[arg(long, global = true, default_value = "switchstab-out")]
    pub out: PathBuf,
    /// Master seed; overrides the model file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Only print errors.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a model file against every model invariant.
    Validate { model: PathBuf },
    /// Solve the coupled Riccati system and check the pairwise condition.
    Solve(SolveArgs),
    /// Run the closed-loop ensemble.
    Simulate(SimulateArgs),
    /// Mixing estimate, filter calibration and generator cross-check.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    pub model: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub model: PathBuf,
    /// Horizon; overrides the model file.
    #[arg(long = "T")]
    pub horizon: Option<f64>,
    /// Step size; overrides the model file.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Number of paths; overrides the model file.
    #[arg(long)]
    pub paths: Option<usize>,
    /// Number of leading paths written as trajectory CSV.
    #[arg(long, default_value_t = 1)]
    pub save_paths: usize,
    /// Radius of the ball used for return times.
    #[arg(long, default_value_t = 2.0)]
    pub radius: f64,
    /// Simulate even if the pairwise condition fails.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    pub model: PathBuf,
    /// Horizon of the calibration ensemble.
    #[arg(long = "T", default_value_t = 2.0)]
    pub horizon: f64,
    /// Paths in the calibration ensemble.
    #[arg(long, default_value_t = 500)]
    pub paths: usize,
    /// Random points in the generator cross-check.
    #[arg(long, default_value_t = 100)]
    pub points: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Failed(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Failed(e)
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let console = Console::new(cli.quiet);
    let pool = match thread_pool() {
        Ok(pool) => pool,
        Err(msg) => {
            console.error(&msg);
            return EXIT_USAGE;
        }
    };
    let result = pool.install(|| match &cli.command {
        Command::Validate { model } => validate(model, &console),
        Command::Solve(args) => solve(args, &cli, &console),
        Command::Simulate(args) => simulate(args, &cli, &console),
        Command::Diagnose(args) => diagnose(args, &cli, &console),
    });
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            console.error(&format!("usage: {msg}"));
            EXIT_USAGE
        }
        Err(Failure::Failed(e)) => {
            console.error(&format!("{e:#}"));
            EXIT_FAILURE
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool, String> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        match raw.trim().parse::<usize>() {
            Ok(n) if n > 0 => builder = builder.num_threads(n),
            _ => return Err(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")),
        }
    }
    builder.build().map_err(|e| e.to_string())
}
