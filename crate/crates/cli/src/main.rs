//! `mrta`: dataset generation, exact solving, reward extraction, simulation,
//! benchmarking and replay checks.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 solver time budget
//! exceeded.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mrta_core::sim::PolicyKind;

use crate::config::FileConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0:#}")]
    Data(anyhow::Error),
    #[error("{0}")]
    Timeout(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Timeout(_) => 3,
        }
    }
}

/// Wraps any module error as a data error.
pub fn data(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Data(e.into())
}

#[derive(Debug, Parser)]
#[command(name = "mrta", version, about = "Heterogeneous multi-robot task allocation toolkit")]
#[command(after_help = "Exit codes: 0 success, 1 usage error, 2 data error, 3 solver time budget exceeded.")]
pub struct Cli {
    /// TOML file with defaults; flags given on the command line override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for per-instance parallelism (0 = all cores).
    #[arg(long, short = 'j', global = true)]
    pub jobs: Option<usize>,
    /// More log output; repeat for more detail.
    #[arg(long, short = 'v', global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate instances, solve them exactly and export expert tensors.
    GenDataset(GenDatasetArgs),
    /// Solve one instance to optimality.
    Solve(SolveArgs),
    /// Extract decision points and target rewards from an expert schedule.
    ExtractRewards(ExtractArgs),
    /// Run one policy on one instance through the replanning simulator.
    Simulate(SimulateArgs),
    /// Compare policies on generated instances and write CSV plus plot data.
    Benchmark(BenchmarkArgs),
    /// Replay every expert schedule of a dataset and report the fidelity.
    ReplayCheck(ReplayArgs),
}

/// Solver budget flags shared by the commands that solve.
#[derive(Debug, Args, Clone, Default)]
pub struct SolverArgs {
    /// Wall-clock limit per instance, in seconds.
    #[arg(long, value_name = "SECONDS")]
    pub time_limit: Option<f64>,
    /// Node limit per instance; makes timeouts reproducible.
    #[arg(long)]
    pub node_limit: Option<u64>,
}

/// Instance shape flags overriding the config's `[generator]` table.
#[derive(Debug, Args, Clone, Default)]
pub struct ShapeArgs {
    #[arg(long)]
    pub robots: Option<usize>,
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub skills: Option<usize>,
    /// Precedence edges per instance.
    #[arg(long)]
    pub precedence: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    /// Output directory; receives manifest.json, timings.json and the
    /// instances/, schedules/ and tensors/ folders.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Number of instances (default 1000).
    #[arg(long, short)]
    pub n: Option<u64>,
    /// First seed; instance k uses seed + k.
    #[arg(long, short)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[command(flatten)]
    pub shape: ShapeArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long, short)]
    pub instance: PathBuf,
    /// Where to write the schedule file.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long, short)]
    pub instance: PathBuf,
    #[arg(long, short = 'S')]
    pub schedule: PathBuf,
    /// Tensor file to write.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write one reward-matrix file per decision point here.
    #[arg(long, value_name = "DIR")]
    pub reward_dir: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, short)]
    pub instance: PathBuf,
    /// Policy to run. Ignored when reward files are given.
    #[arg(long, short, default_value = "greedy", conflicts_with = "rewards")]
    pub policy: PolicyKind,
    /// Expert schedule, required by expert-replay and sampled.
    #[arg(long, short = 'S')]
    pub schedule: Option<PathBuf>,
    /// Reward-matrix files, consumed in decision-index order.
    #[arg(long, num_args = 1.., value_name = "FILE")]
    pub rewards: Vec<PathBuf>,
    #[arg(long, short)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Best-of-N rollouts; reward-based policies only.
    #[arg(long)]
    pub rollouts: Option<usize>,
    /// Rollout noise relative to each matrix's value spread.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Where to write the resulting schedule.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Write the per-decision trace as JSON.
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Comma-separated policies.
    #[arg(long, value_delimiter = ',', default_value = "greedy,expert-replay,random,sampled")]
    pub policies: Vec<PolicyKind>,
    /// Comma-separated sizes as ROBOTSxTASKS or ROBOTSxTASKSxEDGES.
    #[arg(long, value_delimiter = ',', value_parser = parse_size)]
    pub sizes: Vec<Size>,
    /// Instances per size.
    #[arg(long, short, default_value_t = 100)]
    pub n: u64,
    #[arg(long, short)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub rollouts: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Skip the exact solver; gaps stay empty and expert policies are refused.
    #[arg(long)]
    pub no_exact: bool,
    /// CSV output path.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Plot-data JSON path (default: next to the CSV).
    #[arg(long, value_name = "FILE")]
    pub plot_data: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long, short)]
    pub manifest: PathBuf,
    /// Discount factor (default: the one recorded in the manifest).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Write per-instance results as JSON.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Fail with a data error when fidelity falls below this fraction.
    #[arg(long, value_name = "RATE")]
    pub min_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Size {
    pub robots: usize,
    pub tasks: usize,
    pub edges: Option<usize>,
}

fn parse_size(s: &str) -> Result<Size, String> {
    let parts: Vec<&str> = s.split('x').collect();
    let num = |p: &str| p.trim().parse::<usize>().map_err(|_| format!("invalid size {s:?}; expected NxM or NxMxE"));
    match parts.as_slice() {
        [n, m] => Ok(Size { robots: num(n)?, tasks: num(m)?, edges: None }),
        [n, m, e] => Ok(Size { robots: num(n)?, tasks: num(m)?, edges: Some(num(e)?) }),
        _ => Err(format!("invalid size {s:?}; expected NxM or NxMxE")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = FileConfig::load(cli.config.as_deref())?;
    if let Some(j) = cli.jobs {
        config.jobs = j;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", config.jobs)))?;
    pool.install(|| match cli.command {
        Command::GenDataset(a) => commands::gen_dataset(config, a),
        Command::Solve(a) => commands::solve(config, a),
        Command::ExtractRewards(a) => commands::extract_rewards(config, a),
        Command::Simulate(a) => commands::simulate(config, a),
        Command::Benchmark(a) => commands::benchmark(config, a),
        Command::ReplayCheck(a) => commands::replay_check(config, a),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn sizes_parse() {
        assert_eq!(parse_size("3x8").unwrap(), Size { robots: 3, tasks: 8, edges: None });
        assert_eq!(parse_size("20x250x50").unwrap(), Size { robots: 20, tasks: 250, edges: Some(50) });
        assert!(parse_size("3by8").is_err());
    }
}
