use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use flowmapf_core::cliffmap::{build_cliffmap, dataset_hash, save_cliffmap, CliffMap};
use flowmapf_core::guidance::{build_guidance_graph, max_flow_ratio};
use flowmapf_core::lifelong::{compute_metrics, generate_task_queue, rhcr_run, SimulationLog};
use flowmapf_core::solver::cbs_solve;
use flowmapf_core::trajectories::{
    bin_observations, dataset_velocities, load_trajectories, write_trajectories, Trajectory,
    DEFAULT_DT,
};
use flowmapf_core::uasim::{
    count_conflicts, generate_dataset, generate_stream, to_trajectories, tracks_from_log,
    tracks_from_paths, StreamMode, UATrajectory, DEFAULT_DATASET_SIZE,
};
use flowmapf_core::world::{parse_scen, random_scenario};
use flowmapf_core::{GridMap, GuidanceGraph, Solution};
use serde::Serialize;
use tracing::warn;

use crate::config::{
    load_cliff, load_map, read_text, required, to_json_pretty, OutputDir, Settings, UaSource,
};
use crate::error::{CliError, CliResult};
use crate::experiment::{self, ExperimentConfig};
use crate::{
    BenchArgs, EvalArgs, FitModArgs, GenUasArgs, GuidanceArgs, LifelongArgs, SolveArgs, UaMode,
};

/// Global options shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Context {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub output_root: Option<PathBuf>,
}

impl Context {
    fn settings(&self) -> CliResult<Settings> {
        Settings::load_or_default(self.config.as_deref())
    }

    fn output(&self, configured: Option<&Path>) -> OutputDir {
        OutputDir::resolve(
            self.output_root.as_deref(),
            self.out.as_deref().or(configured),
        )
    }
}

fn set<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

fn set_value<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

/// The flow-aware graph when a motion map is given, the uniform one otherwise.
fn guidance(
    map: &GridMap,
    cliff: Option<&CliffMap>,
    step_cost: f64,
) -> CliResult<(GuidanceGraph, &'static str)> {
    Ok(match cliff {
        Some(c) => (build_guidance_graph(map, c, step_cost)?, "flow-aware"),
        None => (GuidanceGraph::uniform(map, step_cost)?, "baseline"),
    })
}

fn write_csv<T: Serialize>(out: &OutputDir, name: &str, rows: &[T]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::runtime(e.to_string()))?;
    out.write(name, &bytes)?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn write_uas(out: &OutputDir, name: &str, uas: &[Trajectory]) -> CliResult<PathBuf> {
    let mut buf = Vec::new();
    write_trajectories(&mut buf, uas)?;
    out.write(name, buf)
}

fn load_uas(path: &Path) -> CliResult<Vec<Trajectory>> {
    load_trajectories(read_text(path)?.as_bytes()).map_err(|e| CliError::at(path, e))
}

#[derive(Debug, Serialize)]
struct FitSummary {
    map: String,
    trajectories: usize,
    observations: usize,
    dropped_observations: usize,
    passable_cells: usize,
    modeled_cells: usize,
    coverage: f64,
    dataset_hash: String,
}

pub fn fit_mod(ctx: &Context, a: FitModArgs) -> CliResult<()> {
    let mut s = ctx.settings()?;
    set(&mut s.map, a.map);
    set(&mut s.trajectories, a.trajectories);
    set_value(&mut s.fit.seed, a.seed);
    set_value(&mut s.fit.min_observations, a.min_observations);
    set_value(&mut s.fit.max_components, a.max_components);
    let map_path = required(&s.map, "map")?;
    let traj_path = required(&s.trajectories, "trajectories")?;
    let map = load_map(&map_path)?;
    let data = load_uas(&traj_path)?;
    if data.is_empty() {
        warn!(
            "{} holds no trajectories; the motion map will have no models",
            traj_path.display()
        );
    }

    let obs = dataset_velocities(&data, DEFAULT_DT).map_err(|e| CliError::at(&traj_path, e))?;
    let binned = bin_observations(&obs, &map);
    let mut cliff = build_cliffmap(&binned, &map, &s.fit);
    let mut canonical = Vec::new();
    write_trajectories(&mut canonical, &data)?;
    cliff.set_dataset_hash(dataset_hash(&canonical));

    let out = ctx.output(s.output.as_deref());
    out.write("cliffmap.json", save_cliffmap(&cliff))?;
    let summary = FitSummary {
        map: map.name().to_string(),
        trajectories: data.len(),
        observations: binned.total(),
        dropped_observations: binned.dropped(),
        passable_cells: map.passable_count(),
        modeled_cells: cliff.modeled_count(),
        coverage: cliff.coverage(&map),
        dataset_hash: cliff.dataset_hash().to_string(),
    };
    out.write("fit_summary.json", to_json_pretty(&summary))?;
    println!(
        "{} trajectories, {} observations; {} of {} cells modeled ({:.1}% coverage)",
        summary.trajectories,
        summary.observations,
        summary.modeled_cells,
        summary.passable_cells,
        100.0 * summary.coverage
    );
    println!("wrote {}", out.file("cliffmap.json").display());
    Ok(())
}

pub fn guidance_export(ctx: &Context, a: GuidanceArgs) -> CliResult<()> {
    let mut s = ctx.settings()?;
    set(&mut s.map, a.map);
    set(&mut s.cliffmap, a.cliffmap);
    set(&mut s.step_cost, a.step_cost);
    let map = load_map(&required(&s.map, "map")?)?;
    let cliff = s
        .cliffmap
        .as_deref()
        .map(|p| load_cliff(p, &map))
        .transpose()?;
    let (gg, _) = guidance(&map, cliff.as_ref(), s.step_cost())?;
    let mut buf = Vec::new();
    gg.write_csv(&mut buf)?;
    let out = ctx.output(s.output.as_deref());
    let path = out.write("guidance.csv", buf)?;
    println!(
        "{} edges, omega2 = {:.6}",
        gg.all_edges().count(),
        max_flow_ratio(&gg)
    );
    println!("wrote {}", path.display());
    Ok(())
}

/// One line of `stats.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct SolveStatsRow {
    pub map: String,
    pub agents: usize,
    pub variant: String,
    pub solved: bool,
    pub failure: Option<String>,
    pub cost: Option<f64>,
    pub unit_cost: Option<usize>,
    pub high_level_expanded: usize,
    pub high_level_generated: usize,
    pub low_level_calls: usize,
    pub low_level_expanded: usize,
    pub runtime_secs: f64,
}

pub fn solve(ctx: &Context, a: SolveArgs) -> CliResult<()> {
    let mut s = ctx.settings()?;
    set(&mut s.map, a.map);
    set(&mut s.scen, a.scen);
    set(&mut s.agents, a.agents);
    set(&mut s.task_seed, a.task_seed);
    set(&mut s.cliffmap, a.cliffmap);
    set_value(&mut s.cbs.omega1, a.omega1);
    set_value(&mut s.cbs.time_limit_secs, a.time_limit);
    set(&mut s.cbs.node_limit, a.node_limit);
    set_value(&mut s.cbs.low_level, a.low_level.map(Into::into));
    if !(s.cbs.omega1 >= 1.0) {
        return Err(CliError::input(format!(
            "omega1 must be at least 1, got {}",
            s.cbs.omega1
        )));
    }
    if !(s.cbs.time_limit_secs > 0.0) {
        return Err(CliError::input("time limit must be positive"));
    }

    let map = load_map(&required(&s.map, "map")?)?;
    let scenario = match &s.scen {
        Some(p) => {
            let text = read_text(p)?;
            // Without an agent count, every entry of the file is used.
            let n = s.agents.unwrap_or_else(|| {
                text.lines()
                    .skip(1)
                    .filter(|l| !l.trim().is_empty())
                    .count()
            });
            parse_scen(&text, n, &map).map_err(|e| CliError::at(p, e))?
        }
        None => random_scenario(
            &map,
            required(&s.agents, "agents")?,
            s.task_seed.unwrap_or(0),
        )?,
    };
    let agents = scenario.len();
    let cliff = s
        .cliffmap
        .as_deref()
        .map(|p| load_cliff(p, &map))
        .transpose()?;
    let (gg, variant) = guidance(&map, cliff.as_ref(), s.step_cost())?;

    let started = Instant::now();
    let result = cbs_solve(&gg, &scenario, &s.cbs);
    let runtime_secs = started.elapsed().as_secs_f64();
    let out = ctx.output(s.output.as_deref());
    let (row, invalid) = match &result {
        Ok(sol) => {
            out.write("solution.json", sol.to_json() + "\n")?;
            (
                stats_row(
                    &map,
                    agents,
                    variant,
                    Some(sol),
                    None,
                    &sol.stats,
                    runtime_secs,
                ),
                None,
            )
        }
        Err(f) => {
            let reason = serde_json::to_value(&f.reason).expect("reason serialises");
            let reason = reason
                .as_str()
                .map_or_else(|| reason.to_string(), str::to_string);
            let invalid = matches!(f.reason, flowmapf_core::solver::FailureReason::Invalid(_))
                .then(|| reason.clone());
            (
                stats_row(
                    &map,
                    agents,
                    variant,
                    None,
                    Some(reason),
                    &f.stats,
                    runtime_secs,
                ),
                invalid,
            )
        }
    };
    let table = write_csv(&out, "stats.csv", std::slice::from_ref(&row))?;
    print!("{table}");
    match invalid {
        Some(msg) => Err(CliError::runtime(format!("solver failed: {msg}"))),
        None => Ok(()),
    }
}

fn stats_row(
    map: &GridMap,
    agents: usize,
    variant: &str,
    sol: Option<&Solution>,
    failure: Option<String>,
    stats: &flowmapf_core::solver::SolverStats,
    runtime_secs: f64,
) -> SolveStatsRow {
    SolveStatsRow {
        map: map.name().to_string(),
        agents,
        variant: variant.to_string(),
        solved: sol.is_some(),
        failure,
        cost: sol.map(|s| s.cost),
        unit_cost: sol.map(|s| s.unit_cost),
        high_level_expanded: stats.high_level_expanded,
        high_level_generated: stats.high_level_generated,
        low_level_calls: stats.low_level_calls,
        low_level_expanded: stats.low_level_expanded,
        runtime_secs,
    }
}

/// One line of the lifelong `metrics.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct LifelongRow {
    pub map: String,
    pub agents: usize,
    pub variant: String,
    pub task_seed: u64,
    pub throughput: f64,
    pub completed_tasks: usize,
    pub failed_iterations: usize,
    pub ua_conflicts: Option<usize>,
    pub ua_conflicts_per_timestep: Option<f64>,
    pub mean_runtime_secs: f64,
}

pub fn lifelong(ctx: &Context, a: LifelongArgs) -> CliResult<()> {
    let mut s = ctx.settings()?;
    set(&mut s.map, a.map);
    set(&mut s.agents, a.agents);
    set(&mut s.cliffmap, a.cliffmap);
    set(&mut s.ua, a.ua_config.map(UaSource::Path));
    set(&mut s.task_seed, a.task_seed);
    set_value(&mut s.sim.sim_time, a.sim_time);
    set_value(&mut s.sim.replan_period, a.replan_period);
    set_value(&mut s.sim.horizon, a.horizon);
    set_value(&mut s.sim.omega1, a.omega1);
    set_value(&mut s.sim.time_limit_secs, a.time_limit);
    set(&mut s.sim.node_limit, a.node_limit);
    set_value(&mut s.sim.low_level, a.low_level.map(Into::into));
    s.sim.validate()?;

    let map = load_map(&required(&s.map, "map")?)?;
    let agents = required(&s.agents, "agents")?;
    let ua = match &s.ua {
        Some(src) => {
            let mut ua = src.load()?;
            set_value(&mut ua.seed, a.ua_seed);
            ua.validate(&map)?;
            Some(ua)
        }
        None => None,
    };
    let cliff = s
        .cliffmap
        .as_deref()
        .map(|p| load_cliff(p, &map))
        .transpose()?;
    let (gg, variant) = guidance(&map, cliff.as_ref(), s.step_cost())?;
    let task_seed = s.task_seed.unwrap_or(0);
    let queue = generate_task_queue(&map, agents, task_seed)?;
    let log = rhcr_run(&gg, &queue, &s.sim)?;

    let out = ctx.output(s.output.as_deref());
    let mut buf = Vec::new();
    log.write_jsonl(&mut buf)?;
    out.write("log.jsonl", buf)?;
    let conflicts = match &ua {
        Some(ua) => {
            let stream = to_trajectories(&generate_stream(
                &map,
                ua,
                StreamMode::Lifelong,
                s.sim.sim_time,
            )?);
            write_uas(&out, "uas.csv", &stream)?;
            let report = count_conflicts(&map, &tracks_from_log(&log), &stream, &s.conflict);
            out.write("conflicts.json", to_json_pretty(&report))?;
            Some(report.total)
        }
        None => None,
    };
    let m = compute_metrics(&log, conflicts);
    out.write("metrics.json", to_json_pretty(&m))?;
    let row = LifelongRow {
        map: map.name().to_string(),
        agents,
        variant: variant.to_string(),
        task_seed,
        throughput: m.throughput,
        completed_tasks: m.completed_tasks,
        failed_iterations: m.failed_iterations,
        ua_conflicts: m.ua_conflicts,
        ua_conflicts_per_timestep: m.ua_conflicts_per_timestep,
        mean_runtime_secs: m.mean_runtime_secs,
    };
    print!("{}", write_csv(&out, "metrics.csv", &[row])?);
    Ok(())
}

pub fn gen_uas(ctx: &Context, a: GenUasArgs) -> CliResult<()> {
    let mut s = ctx.settings()?;
    set(&mut s.map, a.map);
    set(&mut s.ua, a.ua_config.map(UaSource::Path));
    let map = load_map(&required(&s.map, "map")?)?;
    let mut ua = match &s.ua {
        Some(src) => src.load()?,
        None => {
            return Err(CliError::input(
                "missing --ua-config (or `ua` in the config file)",
            ))
        }
    };
    set_value(&mut ua.seed, a.seed);
    ua.validate(&map)?;
    let uas: Vec<UATrajectory> = match a.mode {
        UaMode::Dataset => generate_dataset(&map, &ua, a.count.unwrap_or(DEFAULT_DATASET_SIZE))?,
        UaMode::Oneshot => {
            set_value(&mut ua.oneshot_count, a.count);
            generate_stream(&map, &ua, StreamMode::Oneshot, 0)?
        }
        UaMode::Lifelong => generate_stream(
            &map,
            &ua,
            StreamMode::Lifelong,
            a.sim_time.unwrap_or(s.sim.sim_time),
        )?,
    };
    let out = ctx.output(s.output.as_deref());
    let path = write_uas(&out, "uas.csv", &to_trajectories(&uas))?;
    println!("{} trajectories written to {}", uas.len(), path.display());
    Ok(())
}

pub fn eval_conflicts(ctx: &Context, a: EvalArgs) -> CliResult<()> {
    let mut s = ctx.settings()?;
    set(&mut s.map, a.map);
    set(&mut s.uas, a.uas);
    if a.log.is_some() || a.solution.is_some() {
        s.log = a.log;
        s.solution = a.solution;
    }
    set_value(&mut s.conflict.radius_agent, a.radius_agent);
    set_value(&mut s.conflict.radius_ua, a.radius_ua);
    let map = load_map(&required(&s.map, "map")?)?;
    let uas_path = required(&s.uas, "uas")?;
    let uas = load_uas(&uas_path)?;
    let tracks = match (&s.log, &s.solution) {
        (Some(p), None) => {
            let file = std::fs::File::open(p)
                .map_err(|e| CliError::input(format!("cannot read {}: {e}", p.display())))?;
            let log =
                SimulationLog::read_jsonl(BufReader::new(file)).map_err(|e| CliError::at(p, e))?;
            tracks_from_log(&log)
        }
        (None, Some(p)) => {
            let sol = Solution::from_json(&read_text(p)?).map_err(|e| CliError::at(p, e))?;
            let makespan = sol.paths.iter().map(|q| q.end_time()).max().unwrap_or(0);
            tracks_from_paths(&sol.paths, makespan)
        }
        _ => return Err(CliError::input("give exactly one of --log and --solution")),
    };
    for t in &tracks {
        if let Some(v) = t.cells.iter().find(|v| !map.in_bounds(**v)) {
            return Err(CliError::input(format!(
                "agent {} visits {v}, outside the map",
                t.agent
            )));
        }
    }
    let report = count_conflicts(&map, &tracks, &uas, &s.conflict);
    let out = ctx.output(s.output.as_deref());
    let path = out.write("conflicts.json", to_json_pretty(&report))?;
    println!(
        "{} conflicts between {} agents and {} UAs",
        report.total,
        tracks.len(),
        uas.len()
    );
    println!("wrote {}", path.display());
    Ok(())
}

pub fn bench(ctx: &Context, a: BenchArgs) -> CliResult<()> {
    let path = ctx
        .config
        .as_deref()
        .ok_or_else(|| CliError::input("bench needs --config with an experiment description"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    set(&mut cfg.threads, a.threads);
    set_value(&mut cfg.seeds, a.seeds);
    let out = ctx.output(cfg.output.as_deref());
    let report = experiment::run_experiment(&cfg)?;
    experiment::write_report(&report, &out)?;
    for line in report.summary_lines() {
        println!("{line}");
    }
    println!("wrote reports to {}", out.path().display());
    Ok(())
}
