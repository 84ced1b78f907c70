//! `revmarkov`: nearest reversible Markov chain toolbox.
//!
//! Subcommands cover the full workflow: `generate`/`simulate` produce test
//! chains, `decompose` inspects their ergodic structure, `solve` runs the
//! Riemannian pipeline, `oracle` runs the independent Dykstra projection, and
//! `bench` drives whole suites into metric and performance-profile CSV files.

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use thiserror::Error;

mod commands;
mod format;
mod report;

use format::MatrixFormat;

/// Exit codes: 0 success, 2 input or validation error, 3 solver failure.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "revmarkov",
    version,
    about = "Find the reversible Markov chain nearest to a given one in Frobenius distance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Project a stochastic matrix onto the nearest reversible chain.
    Solve(SolveArgs),
    /// Sample a random test chain.
    Generate(GenerateArgs),
    /// Integrate an overdamped Langevin dynamics and bin the trajectory into
    /// a transition matrix.
    Simulate(SimulateArgs),
    /// Reference projection via Dykstra alternating projections.
    Oracle(OracleArgs),
    /// Run a benchmark suite; emits per-run metrics and performance profiles.
    Bench(BenchArgs),
    /// Print the transient states and ergodic classes of a chain.
    Decompose(DecomposeArgs),
}

/// Output format override; the default mirrors the input format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    /// Matrix Market dense array.
    Mm,
    /// Headerless comma-separated values.
    Csv,
}

impl From<FormatArg> for MatrixFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Mm => MatrixFormat::MatrixMarket,
            FormatArg::Csv => MatrixFormat::Csv,
        }
    }
}

#[derive(Args)]
pub struct SolveArgs {
    /// Stochastic matrix to project (Matrix Market array or headerless CSV).
    #[arg(long)]
    pub input: PathBuf,
    /// Stationary distribution file; computed by power iteration when absent.
    #[arg(long)]
    pub pi: Option<PathBuf>,
    /// Solve each ergodic class on its own manifold.
    #[arg(long, default_value_t = true, action = ArgAction::Set, value_name = "BOOL")]
    pub recurse_ergodic: bool,
    /// Gradient-norm stopping tolerance of the trust-region solver.
    #[arg(long, default_value_t = 1e-6)]
    pub grad_tol: f64,
    /// Stationary mass below which a state counts as transient
    /// (default 1e-12 * n).
    #[arg(long)]
    pub transient_tol: Option<f64>,
    /// Start from a random manifold point instead of the scaled input.
    #[arg(long, default_value_t = false, action = ArgAction::Set, value_name = "BOOL")]
    pub random_init: bool,
    /// Seed for --random-init.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the projected matrix.
    #[arg(long)]
    pub output: PathBuf,
    /// Where to write the JSON report.
    #[arg(long)]
    pub report: PathBuf,
    /// Output encoding; mirrors the input format when absent.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Chain family: uniform, normal, sbm, or multi-ergodic.
    #[arg(long)]
    pub kind: String,
    /// Number of states.
    #[arg(long)]
    pub n: usize,
    /// RNG seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the sampled chain.
    #[arg(long)]
    pub output: PathBuf,
    /// Output encoding (default Matrix Market array).
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Named potential; only "butane" is built in.
    #[arg(long, conflicts_with = "coeffs")]
    pub potential: Option<String>,
    /// Coefficients a0,a1,a2,a3 of a0 + a1 cos x + a2 cos^2 x + a3 cos^3 x.
    #[arg(long, value_name = "A0,A1,A2,A3")]
    pub coeffs: Option<String>,
    /// Euler-Maruyama step size.
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Noise intensity.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Number of integration steps.
    #[arg(long)]
    pub steps: usize,
    /// Angular bins on [0, 2pi).
    #[arg(long, default_value_t = 30)]
    pub bins: usize,
    /// RNG seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Raw transition counts output.
    #[arg(long)]
    pub output_counts: Option<PathBuf>,
    /// Row-normalized empirical chain output (restricted to visited bins).
    #[arg(long)]
    pub output_matrix: Option<PathBuf>,
    /// Output encoding (default Matrix Market array).
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Args)]
pub struct OracleArgs {
    /// Stochastic matrix to project (Matrix Market array or headerless CSV).
    #[arg(long)]
    pub input: PathBuf,
    /// Stationary distribution file; computed by power iteration when absent.
    #[arg(long)]
    pub pi: Option<PathBuf>,
    /// Dykstra stopping tolerance on the iterate change.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Where to write the projected matrix.
    #[arg(long)]
    pub output: PathBuf,
    /// Output encoding; mirrors the input format when absent.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Suite file: one "kind,n,seed" entry per line, # comments allowed.
    #[arg(long)]
    pub suite: PathBuf,
    /// Comma-separated solvers to run: riemann, dykstra.
    #[arg(long)]
    pub solvers: String,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Repetitions per suite entry.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
}

#[derive(Args)]
pub struct DecomposeArgs {
    /// Stochastic matrix to analyze (Matrix Market array or headerless CSV).
    #[arg(long)]
    pub input: PathBuf,
    /// Stationary mass below which a state counts as transient
    /// (default 1e-12 * n).
    #[arg(long)]
    pub transient_tol: Option<f64>,
}

fn main() {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("REVMARKOV_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring invalid REVMARKOV_THREADS={v:?}"),
        }
    }
    let result = match &cli.command {
        Command::Solve(args) => commands::cmd_solve(args),
        Command::Generate(args) => commands::cmd_generate(args),
        Command::Simulate(args) => commands::cmd_simulate(args),
        Command::Oracle(args) => commands::cmd_oracle(args),
        Command::Bench(args) => commands::cmd_bench(args),
        Command::Decompose(args) => commands::cmd_decompose(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
