//! Baseline vs flow-aware experiments over maps and seeds.
//!
//! Runs are independent: each one builds its own task queue, UA stream and
//! heuristic tables from the seed, so results do not depend on the number of
//! worker threads. Rows come out in (map, variant, seed) order.

use std::path::{Path, PathBuf};

use flowmapf_core::cliffmap::{fit_cliffmap, CliffMap, FitConfig};
use flowmapf_core::guidance::build_guidance_graph;
use flowmapf_core::lifelong::{compute_metrics, generate_task_queue, rhcr_run, SimulationConfig};
use flowmapf_core::solver::cbs_solve;
use flowmapf_core::uasim::{
    count_conflicts, generate_dataset, generate_stream, to_trajectories, tracks_from_log,
    tracks_from_paths, ConflictConfig, StreamMode, UAConfig,
};
use flowmapf_core::world::{parse_scen, random_scenario};
use flowmapf_core::{CbsConfig, GridMap, GuidanceGraph, Scenario};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::config::{
    check_exists, load_cliff, load_json, load_map, read_text, to_json_pretty, OutputDir, UaSource,
};
use crate::error::{CliError, CliResult};
use crate::plot::{bar_chart, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Uniform step costs.
    Baseline,
    /// Step costs plus the normalised flow cost.
    FlowAware,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::FlowAware => "flow-aware",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentMode {
    #[default]
    Lifelong,
    Oneshot,
}

/// A map and where its motion model comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapEntry {
    pub map: PathBuf,
    /// One-shot mode: agents are read from this file instead of drawn per seed.
    #[serde(default)]
    pub scen: Option<PathBuf>,
    /// A fitted motion map. Without one, the map is fitted to `trajectories`
    /// or to a dataset generated from the UA config.
    #[serde(default)]
    pub cliffmap: Option<PathBuf>,
    #[serde(default)]
    pub trajectories: Option<PathBuf>,
    /// UA config of this map, replacing the experiment-wide one.
    #[serde(default)]
    pub ua: Option<UaSource>,
}

impl MapEntry {
    pub fn new(map: impl Into<PathBuf>) -> Self {
        MapEntry {
            map: map.into(),
            scen: None,
            cliffmap: None,
            trajectories: None,
            ua: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub mode: ExperimentMode,
    pub maps: Vec<MapEntry>,
    pub variants: Vec<Variant>,
    /// Each seed fixes the task queue (or random instance) and the UA stream.
    pub seeds: Vec<u64>,
    pub agents: usize,
    /// UA config; its own seed drives the training dataset.
    pub ua: Option<UaSource>,
    pub dataset_size: usize,
    pub fit: FitConfig,
    pub step_cost: f64,
    /// One-shot solver settings.
    pub cbs: CbsConfig,
    /// Lifelong settings.
    pub sim: SimulationConfig,
    pub conflict: ConflictConfig,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            mode: ExperimentMode::Lifelong,
            maps: Vec::new(),
            variants: vec![Variant::Baseline, Variant::FlowAware],
            seeds: vec![0, 1, 2],
            agents: 20,
            ua: None,
            dataset_size: flowmapf_core::uasim::DEFAULT_DATASET_SIZE,
            fit: FitConfig::default(),
            step_cost: 1.0,
            cbs: CbsConfig::default(),
            sim: SimulationConfig::default(),
            conflict: ConflictConfig::default(),
            threads: None,
            output: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file; relative paths inside it are taken relative to the file.
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut cfg: ExperimentConfig = load_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| *p = base.join(&*p);
        for m in &mut cfg.maps {
            rebase(&mut m.map);
            m.scen.iter_mut().for_each(rebase);
            m.cliffmap.iter_mut().for_each(rebase);
            m.trajectories.iter_mut().for_each(rebase);
            if let Some(UaSource::Path(p)) = &mut m.ua {
                rebase(p);
            }
        }
        if let Some(UaSource::Path(p)) = &mut cfg.ua {
            rebase(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without running anything.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::input(m));
        if self.maps.is_empty() {
            return bad("the experiment lists no maps".into());
        }
        if self.variants.is_empty() {
            return bad("the experiment lists no variants".into());
        }
        if self.seeds.is_empty() {
            return bad("the experiment lists no seeds".into());
        }
        if self.agents == 0 {
            return bad("agents must be positive".into());
        }
        if !(self.step_cost > 0.0 && self.step_cost.is_finite()) {
            return bad(format!(
                "step_cost must be positive, got {}",
                self.step_cost
            ));
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        match self.mode {
            ExperimentMode::Lifelong => self.sim.validate()?,
            ExperimentMode::Oneshot => {
                if !(self.cbs.omega1 >= 1.0) {
                    return bad(format!(
                        "cbs.omega1 must be at least 1, got {}",
                        self.cbs.omega1
                    ));
                }
                if !(self.cbs.time_limit_secs > 0.0) {
                    return bad("cbs.time_limit_secs must be positive".into());
                }
            }
        }
        for m in &self.maps {
            check_exists(&m.map)?;
            for p in [&m.scen, &m.cliffmap, &m.trajectories]
                .into_iter()
                .flatten()
            {
                check_exists(p)?;
            }
            if let Some(UaSource::Path(p)) = &m.ua {
                check_exists(p)?;
            }
        }
        if let Some(UaSource::Path(p)) = &self.ua {
            check_exists(p)?;
        }
        Ok(())
    }
}

/// One (map, variant, seed) run. Metrics a run does not produce are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub map: String,
    pub variant: Variant,
    pub seed: u64,
    pub solved: bool,
    /// Mean replanning time (lifelong) or solve time (one-shot).
    pub runtime_secs: Option<f64>,
    pub throughput: Option<f64>,
    pub completed_tasks: Option<usize>,
    pub failed_iterations: Option<usize>,
    pub cost: Option<f64>,
    pub ua_conflicts: Option<usize>,
    pub ua_conflicts_per_timestep: Option<f64>,
    pub error: Option<String>,
}

impl RunRow {
    fn new(map: &str, variant: Variant, seed: u64) -> Self {
        RunRow {
            map: map.to_string(),
            variant,
            seed,
            solved: false,
            runtime_secs: None,
            throughput: None,
            completed_tasks: None,
            failed_iterations: None,
            cost: None,
            ua_conflicts: None,
            ua_conflicts_per_timestep: None,
            error: None,
        }
    }
}

/// Mean and sample standard deviation of one metric over the rows carrying it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Stat> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { n, mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub map: String,
    pub variant: Variant,
    pub runs: usize,
    pub solved: usize,
    pub runtime_secs: Option<Stat>,
    pub throughput: Option<Stat>,
    pub cost: Option<Stat>,
    pub ua_conflicts: Option<Stat>,
}

/// Aggregates per (map, variant), in order of first appearance.
pub fn aggregate(rows: &[RunRow]) -> Vec<Aggregate> {
    let mut keys: Vec<(String, Variant)> = Vec::new();
    for r in rows {
        let k = (r.map.clone(), r.variant);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(map, variant)| {
            let group: Vec<&RunRow> = rows
                .iter()
                .filter(|r| r.map == map && r.variant == variant)
                .collect();
            Aggregate {
                runs: group.len(),
                solved: group.iter().filter(|r| r.solved).count(),
                runtime_secs: Stat::of(group.iter().filter_map(|r| r.runtime_secs)),
                throughput: Stat::of(group.iter().filter_map(|r| r.throughput)),
                cost: Stat::of(group.iter().filter_map(|r| r.cost)),
                ua_conflicts: Stat::of(
                    group
                        .iter()
                        .filter_map(|r| r.ua_conflicts.map(|c| c as f64)),
                ),
                map,
                variant,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapInfo {
    pub name: String,
    pub passable_cells: usize,
    /// Cells with a motion model, when a flow-aware variant ran.
    pub modeled_cells: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub config: ExperimentConfig,
    pub maps: Vec<MapInfo>,
    pub rows: Vec<RunRow>,
    pub aggregates: Vec<Aggregate>,
}

impl Report {
    pub fn aggregate_of(&self, map: &str, variant: Variant) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.map == map && a.variant == variant)
    }

    /// Mean flow-aware UA conflicts over mean baseline UA conflicts.
    pub fn conflict_ratio(&self, map: &str) -> Option<f64> {
        let base = self
            .aggregate_of(map, Variant::Baseline)?
            .ua_conflicts?
            .mean;
        let flow = self
            .aggregate_of(map, Variant::FlowAware)?
            .ua_conflicts?
            .mean;
        (base > 0.0).then(|| flow / base)
    }

    pub fn summary_lines(&self) -> Vec<String> {
        let fmt = |s: Option<Stat>, digits: usize| {
            s.map_or_else(
                || "-".to_string(),
                |s| format!("{:.*} ± {:.*}", digits, s.mean, digits, s.std),
            )
        };
        let mut lines = Vec::new();
        for a in &self.aggregates {
            lines.push(format!(
                "{:<16} {:<10} solved {}/{}  runtime {}  throughput {}  cost {}  ua conflicts {}",
                a.map,
                a.variant.name(),
                a.solved,
                a.runs,
                fmt(a.runtime_secs, 4),
                fmt(a.throughput, 3),
                fmt(a.cost, 1),
                fmt(a.ua_conflicts, 1),
            ));
        }
        for m in &self.maps {
            if let Some(r) = self.conflict_ratio(&m.name) {
                lines.push(format!(
                    "{}: flow-aware / baseline UA conflicts = {r:.3}",
                    m.name
                ));
            }
        }
        lines
    }
}

struct Prepared {
    map: GridMap,
    scenario: Option<Scenario>,
    ua: Option<UAConfig>,
    base: GuidanceGraph,
    flow: Option<GuidanceGraph>,
    modeled_cells: Option<usize>,
}

fn prepare(entry: &MapEntry, cfg: &ExperimentConfig) -> CliResult<Prepared> {
    let map = load_map(&entry.map)?;
    let ua = entry
        .ua
        .as_ref()
        .or(cfg.ua.as_ref())
        .map(UaSource::load)
        .transpose()?;
    if let Some(ua) = &ua {
        ua.validate(&map).map_err(|e| CliError::at(&entry.map, e))?;
    }
    let scenario = match (&entry.scen, cfg.mode) {
        (Some(p), ExperimentMode::Oneshot) => {
            Some(parse_scen(&read_text(p)?, cfg.agents, &map).map_err(|e| CliError::at(p, e))?)
        }
        _ => None,
    };
    let base = GuidanceGraph::uniform(&map, cfg.step_cost)?;
    let mut modeled_cells = None;
    let flow = if cfg.variants.contains(&Variant::FlowAware) {
        let cliff = motion_map(entry, cfg, &map, ua.as_ref())?;
        modeled_cells = Some(cliff.modeled_count());
        Some(build_guidance_graph(&map, &cliff, cfg.step_cost)?)
    } else {
        None
    };
    Ok(Prepared {
        map,
        scenario,
        ua,
        base,
        flow,
        modeled_cells,
    })
}

fn motion_map(
    entry: &MapEntry,
    cfg: &ExperimentConfig,
    map: &GridMap,
    ua: Option<&UAConfig>,
) -> CliResult<CliffMap> {
    if let Some(p) = &entry.cliffmap {
        return load_cliff(p, map);
    }
    if let Some(p) = &entry.trajectories {
        let data = flowmapf_core::trajectories::load_trajectories(read_text(p)?.as_bytes())
            .map_err(|e| CliError::at(p, e))?;
        return fit_cliffmap(map, &data, &cfg.fit).map_err(|e| CliError::at(p, e));
    }
    let ua = ua.ok_or_else(|| {
        CliError::input(format!(
            "{}: the flow-aware variant needs a cliffmap, trajectories or a UA config",
            entry.map.display()
        ))
    })?;
    info!(
        map = map.name(),
        n = cfg.dataset_size,
        "generating training dataset"
    );
    let data = to_trajectories(&generate_dataset(map, ua, cfg.dataset_size)?);
    Ok(fit_cliffmap(map, &data, &cfg.fit)?)
}

fn run_one(p: &Prepared, cfg: &ExperimentConfig, variant: Variant, seed: u64) -> RunRow {
    let mut row = RunRow::new(p.map.name(), variant, seed);
    let gg = match variant {
        Variant::Baseline => &p.base,
        Variant::FlowAware => p
            .flow
            .as_ref()
            .expect("flow graph is built when the variant is listed"),
    };
    let stream_cfg = p.ua.as_ref().map(|ua| UAConfig { seed, ..ua.clone() });
    let result = match cfg.mode {
        ExperimentMode::Lifelong => run_lifelong(p, cfg, gg, seed, stream_cfg.as_ref(), &mut row),
        ExperimentMode::Oneshot => run_oneshot(p, cfg, gg, seed, stream_cfg.as_ref(), &mut row),
    };
    if let Err(e) = result {
        row.solved = false;
        row.error = Some(e.to_string());
    }
    row
}

fn run_lifelong(
    p: &Prepared,
    cfg: &ExperimentConfig,
    gg: &GuidanceGraph,
    seed: u64,
    ua: Option<&UAConfig>,
    row: &mut RunRow,
) -> flowmapf_core::Result<()> {
    let queue = generate_task_queue(&p.map, cfg.agents, seed)?;
    let log = rhcr_run(gg, &queue, &cfg.sim)?;
    let conflicts = match ua {
        Some(ua) => {
            let stream = to_trajectories(&generate_stream(
                &p.map,
                ua,
                StreamMode::Lifelong,
                cfg.sim.sim_time,
            )?);
            Some(count_conflicts(&p.map, &tracks_from_log(&log), &stream, &cfg.conflict).total)
        }
        None => None,
    };
    let m = compute_metrics(&log, conflicts);
    row.solved = true;
    row.runtime_secs = Some(m.mean_runtime_secs);
    row.throughput = Some(m.throughput);
    row.completed_tasks = Some(m.completed_tasks);
    row.failed_iterations = Some(m.failed_iterations);
    row.ua_conflicts = m.ua_conflicts;
    row.ua_conflicts_per_timestep = m.ua_conflicts_per_timestep;
    Ok(())
}

fn run_oneshot(
    p: &Prepared,
    cfg: &ExperimentConfig,
    gg: &GuidanceGraph,
    seed: u64,
    ua: Option<&UAConfig>,
    row: &mut RunRow,
) -> flowmapf_core::Result<()> {
    let scenario = match &p.scenario {
        Some(s) => s.clone(),
        None => random_scenario(&p.map, cfg.agents, seed)?,
    };
    let started = std::time::Instant::now();
    let result = cbs_solve(gg, &scenario, &cfg.cbs);
    row.runtime_secs = Some(started.elapsed().as_secs_f64());
    let Ok(sol) = result else {
        return Ok(());
    };
    row.solved = true;
    row.cost = Some(sol.cost);
    if let Some(ua) = ua {
        let makespan = sol.paths.iter().map(|q| q.end_time()).max().unwrap_or(0);
        let uas = to_trajectories(&generate_stream(&p.map, ua, StreamMode::Oneshot, 0)?);
        let total = count_conflicts(
            &p.map,
            &tracks_from_paths(&sol.paths, makespan),
            &uas,
            &cfg.conflict,
        )
        .total;
        row.ua_conflicts = Some(total);
        row.ua_conflicts_per_timestep = Some(total as f64 / makespan.max(1) as f64);
    }
    Ok(())
}

/// Runs every (map, variant, seed) combination.
pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<Report> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::runtime(e.to_string()))?;
    pool.install(|| {
        let prepared: Vec<Prepared> = cfg
            .maps
            .iter()
            .map(|m| prepare(m, cfg))
            .collect::<CliResult<_>>()?;
        let jobs: Vec<(usize, Variant, u64)> = (0..prepared.len())
            .flat_map(|i| {
                cfg.variants
                    .iter()
                    .flat_map(move |&v| cfg.seeds.iter().map(move |&s| (i, v, s)))
            })
            .collect();
        let rows: Vec<RunRow> = jobs
            .par_iter()
            .map(|&(i, v, s)| run_one(&prepared[i], cfg, v, s))
            .collect();
        let maps = prepared
            .iter()
            .map(|p| MapInfo {
                name: p.map.name().to_string(),
                passable_cells: p.map.passable_count(),
                modeled_cells: p.modeled_cells,
            })
            .collect();
        Ok(Report {
            name: cfg.name.clone(),
            config: cfg.clone(),
            maps,
            aggregates: aggregate(&rows),
            rows,
        })
    })
}

#[derive(Serialize)]
struct AggregateRow<'a> {
    map: &'a str,
    variant: Variant,
    runs: usize,
    solved: usize,
    runtime_mean: Option<f64>,
    runtime_std: Option<f64>,
    throughput_mean: Option<f64>,
    throughput_std: Option<f64>,
    cost_mean: Option<f64>,
    cost_std: Option<f64>,
    ua_conflicts_mean: Option<f64>,
    ua_conflicts_std: Option<f64>,
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::runtime(e.to_string()))
}

/// Writes `report.csv`, `aggregates.csv`, `report.json` and one SVG per metric.
pub fn write_report(report: &Report, out: &OutputDir) -> CliResult<()> {
    out.write("report.csv", csv_bytes(&report.rows)?)?;
    let agg_rows = report.aggregates.iter().map(|a| AggregateRow {
        map: &a.map,
        variant: a.variant,
        runs: a.runs,
        solved: a.solved,
        runtime_mean: a.runtime_secs.map(|s| s.mean),
        runtime_std: a.runtime_secs.map(|s| s.std),
        throughput_mean: a.throughput.map(|s| s.mean),
        throughput_std: a.throughput.map(|s| s.std),
        cost_mean: a.cost.map(|s| s.mean),
        cost_std: a.cost.map(|s| s.std),
        ua_conflicts_mean: a.ua_conflicts.map(|s| s.mean),
        ua_conflicts_std: a.ua_conflicts.map(|s| s.std),
    });
    out.write("aggregates.csv", csv_bytes(agg_rows)?)?;
    out.write("report.json", to_json_pretty(report))?;

    let groups: Vec<String> = report.maps.iter().map(|m| m.name.clone()).collect();
    let variants = &report.config.variants;
    let series = |metric: fn(&Aggregate) -> Option<Stat>| -> Vec<Series> {
        variants
            .iter()
            .map(|&v| Series {
                name: v.name().to_string(),
                values: groups
                    .iter()
                    .map(|g| {
                        report
                            .aggregate_of(g, v)
                            .and_then(metric)
                            .map(|s| (s.mean, s.std))
                    })
                    .collect(),
            })
            .collect()
    };
    out.write(
        "runtime.svg",
        bar_chart("Runtime", "seconds", &groups, &series(|a| a.runtime_secs)),
    )?;
    out.write(
        "ua_conflicts.svg",
        bar_chart(
            "Conflicts with uncontrollable agents",
            "conflicts",
            &groups,
            &series(|a| a.ua_conflicts),
        ),
    )?;
    match report.config.mode {
        ExperimentMode::Lifelong => out.write(
            "throughput.svg",
            bar_chart(
                "Throughput",
                "tasks per timestep",
                &groups,
                &series(|a| a.throughput),
            ),
        )?,
        ExperimentMode::Oneshot => out.write(
            "cost.svg",
            bar_chart("Sum of costs", "cost", &groups, &series(|a| a.cost)),
        )?,
    };
    Ok(())
}
