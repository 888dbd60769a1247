//! `swarmfilter` command-line tool.
//!
//! Exit codes: 0 success, 1 output or internal error, 2 invalid problem, grid
//! or file schema, 3 no feasible solution.

mod commands;
mod grid;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "swarmfilter", version, about = "Batched safety filtering of multi-robot trajectories")]
struct Cli {
    /// Log level for progress messages on stderr (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample proposals and filter them into feasible trajectories.
    Generate(GenerateArgs),
    /// Filter externally produced proposals.
    Filter(FilterArgs),
    /// Feasibility, diversity, timing and initialization benchmarks.
    Bench(BenchArgs),
}

/// Solver settings shared by every command. Unset flags fall back to the
/// problem file, then to the built-in default.
#[derive(Args, Debug, Clone, Default)]
pub struct SolverArgs {
    /// Penalty weight rho [default: 1.0]
    #[arg(long)]
    pub rho: Option<f64>,
    /// Maximum fixed-point iterations [default: 200]
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Primal residual tolerance ||r_p||_inf [default: 1e-3]
    #[arg(long)]
    pub tol: Option<f64>,
    /// Constraint margin tolerance of the feasibility check [default: 1e-3]
    #[arg(long)]
    pub margin_tol: Option<f64>,
    /// Bernstein degree [default: 10]
    #[arg(long)]
    pub degree: Option<usize>,
    /// Run exactly max-iters iterations (disable early stopping)
    #[arg(long)]
    pub full_iters: bool,
    /// Worker threads [default: all cores]
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Problem JSON file
    pub problem: PathBuf,
    /// Number of proposals to sample [default: 20]
    #[arg(long)]
    pub count: Option<usize>,
    /// Sampler seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Perturbation amplitude relative to the workspace extents [default: 0.2]
    #[arg(long)]
    pub spread: Option<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output directory
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    /// Problem JSON file
    pub problem: PathBuf,
    /// Proposal JSON file
    #[arg(long)]
    pub proposals: PathBuf,
    /// Warm-start JSON file with one entry per proposal
    #[arg(long)]
    pub warmstart: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output directory
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Problem JSON file
    pub problem: PathBuf,
    /// Grid, e.g. "iters=50:400:50 batch=1,10,50 strategies=zero,projected,warmstart timing-batch=10 repeats=3"
    /// [default: iters=50,100,200,400 batch=1,10,50 all strategies timing-batch=10 repeats=3]
    #[arg(long, default_value = "")]
    pub grid: String,
    /// Sampler seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Perturbation amplitude relative to the workspace extents [default: 0.2]
    #[arg(long)]
    pub spread: Option<f64>,
    /// Warm starts for the warmstart strategy [default: solutions of the problem with goals shifted by (0.15, -0.1, 0.05)]
    #[arg(long)]
    pub warmstart: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output directory
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .format_target(false)
        .init();
    let outcome = match cli.command {
        Command::Generate(args) => commands::generate(&args),
        Command::Filter(args) => commands::filter(&args),
        Command::Bench(args) => commands::bench(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{}", err.message);
            ExitCode::from(err.code)
        }
    }
}
