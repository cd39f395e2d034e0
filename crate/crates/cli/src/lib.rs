//! The `flowmapf` command-line tool.
//!
//! Each subcommand reads an optional JSON config file (`--config`), applies
//! its flags on top and writes its results into the output directory. Relative
//! output directories are placed under `$FLOWMAPF_OUTPUT_ROOT` when it is set.
//!
//! Exit codes: 0 on success (including unsolved instances), 1 when a run
//! fails, 2 for unreadable input or invalid configuration.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod plot;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowmapf_core::solver::LowLevelKind;

pub use config::{OutputDir, Settings, OUTPUT_ROOT_ENV};
pub use error::{CliError, CliResult};
pub use experiment::{ExperimentConfig, ExperimentMode, Report, RunRow, Variant};

#[derive(Debug, Parser)]
#[command(
    name = "flowmapf",
    version,
    about = "Flow-aware multi-agent path finding"
)]
pub struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,
    /// Root for relative output directories.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV, hide_env_values = true)]
    pub output_root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a motion map to a trajectory CSV.
    FitMod(FitModArgs),
    /// Write the guidance graph edge weights as CSV.
    GuidanceExport(GuidanceArgs),
    /// Solve a one-shot MAPF instance.
    Solve(SolveArgs),
    /// Run a lifelong simulation and count UA conflicts.
    Lifelong(LifelongArgs),
    /// Generate uncontrollable-agent trajectories.
    GenUas(GenUasArgs),
    /// Count conflicts between executed paths and UA trajectories.
    EvalConflicts(EvalArgs),
    /// Run a baseline vs flow-aware experiment and write reports and plots.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct FitModArgs {
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub min_observations: Option<usize>,
    #[arg(long)]
    pub max_components: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GuidanceArgs {
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Motion map; without it the graph has uniform weights.
    #[arg(long)]
    pub cliffmap: Option<PathBuf>,
    #[arg(long)]
    pub step_cost: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LowLevelArg {
    Astar,
    Sipp,
}

impl From<LowLevelArg> for LowLevelKind {
    fn from(a: LowLevelArg) -> Self {
        match a {
            LowLevelArg::Astar => LowLevelKind::Astar,
            LowLevelArg::Sipp => LowLevelKind::Sipp,
        }
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Scenario file; without it a random instance is drawn from --task-seed.
    #[arg(long)]
    pub scen: Option<PathBuf>,
    #[arg(long, short = 'n')]
    pub agents: Option<usize>,
    #[arg(long)]
    pub task_seed: Option<u64>,
    #[arg(long)]
    pub cliffmap: Option<PathBuf>,
    #[arg(long)]
    pub omega1: Option<f64>,
    #[arg(long)]
    pub time_limit: Option<f64>,
    #[arg(long)]
    pub node_limit: Option<usize>,
    #[arg(long, value_enum)]
    pub low_level: Option<LowLevelArg>,
}

#[derive(Debug, Args)]
pub struct LifelongArgs {
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long, short = 'n')]
    pub agents: Option<usize>,
    #[arg(long)]
    pub cliffmap: Option<PathBuf>,
    /// UAConfig file; without it no UA conflicts are counted.
    #[arg(long)]
    pub ua_config: Option<PathBuf>,
    #[arg(long)]
    pub task_seed: Option<u64>,
    /// Seed of the UA stream, overriding the UA config's.
    #[arg(long)]
    pub ua_seed: Option<u64>,
    #[arg(long)]
    pub sim_time: Option<usize>,
    #[arg(long)]
    pub replan_period: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub omega1: Option<f64>,
    #[arg(long)]
    pub time_limit: Option<f64>,
    #[arg(long)]
    pub node_limit: Option<usize>,
    #[arg(long, value_enum)]
    pub low_level: Option<LowLevelArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UaMode {
    /// Training data: `--count` trajectories spawned at time 0.
    Dataset,
    /// The UA config's one-shot count, spawned at time 0.
    Oneshot,
    /// One UA per timestep for `--sim-time` steps.
    Lifelong,
}

#[derive(Debug, Args)]
pub struct GenUasArgs {
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub ua_config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "dataset")]
    pub mode: UaMode,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub sim_time: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// UA trajectory CSV.
    #[arg(long)]
    pub uas: Option<PathBuf>,
    /// Simulation log (JSONL) of a lifelong run.
    #[arg(long, conflicts_with = "solution")]
    pub log: Option<PathBuf>,
    /// Solution JSON of a one-shot run.
    #[arg(long)]
    pub solution: Option<PathBuf>,
    #[arg(long)]
    pub radius_agent: Option<f64>,
    #[arg(long)]
    pub radius_ua: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Seeds, overriding the experiment config's.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Runs one parsed invocation.
pub fn run(cli: Cli) -> CliResult<()> {
    let ctx = commands::Context {
        config: cli.config,
        out: cli.out,
        output_root: cli.output_root,
    };
    match cli.command {
        Command::FitMod(a) => commands::fit_mod(&ctx, a),
        Command::GuidanceExport(a) => commands::guidance_export(&ctx, a),
        Command::Solve(a) => commands::solve(&ctx, a),
        Command::Lifelong(a) => commands::lifelong(&ctx, a),
        Command::GenUas(a) => commands::gen_uas(&ctx, a),
        Command::EvalConflicts(a) => commands::eval_conflicts(&ctx, a),
        Command::Bench(a) => commands::bench(&ctx, a),
    }
}
