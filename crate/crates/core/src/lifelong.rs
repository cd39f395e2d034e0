//! Rolling-horizon lifelong MAPF.
//!
//! Every `replan_period` timesteps all agents are replanned from their current
//! vertices towards their next goals, resolving conflicts only within the next
//! `horizon` timesteps; the first `replan_period` steps of the plan are executed.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{GuidanceGraph, HeuristicCache};
use crate::solver::{
    spacetime_astar, AgentPlan, Cbs, CbsConfig, ConstraintTable, LowLevelKind, LowLevelRequest,
    SolveFailure, TimedPath,
};
use crate::world::{components, GridMap, Vertex};

pub const DEFAULT_QUEUE_LENGTH: usize = 1000;

/// Start vertices and per-agent goal sequences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskQueue {
    pub starts: Vec<Vertex>,
    pub goals: Vec<Vec<Vertex>>,
}

impl TaskQueue {
    pub fn new(map: &GridMap, starts: Vec<Vertex>, goals: Vec<Vec<Vertex>>) -> Result<Self> {
        if starts.len() != goals.len() {
            return Err(Error::InvalidScenario(format!(
                "{} starts but {} goal lists",
                starts.len(),
                goals.len()
            )));
        }
        let mut seen = HashSet::new();
        for (i, &s) in starts.iter().enumerate() {
            if !map.is_passable(s) {
                return Err(Error::InvalidScenario(format!(
                    "agent {i}: start {s} is not passable"
                )));
            }
            if !seen.insert(s) {
                return Err(Error::InvalidScenario(format!(
                    "agent {i}: duplicate start {s}"
                )));
            }
            if let Some(g) = goals[i].iter().find(|&&g| !map.is_passable(g)) {
                return Err(Error::InvalidScenario(format!(
                    "agent {i}: goal {g} is not passable"
                )));
            }
        }
        Ok(TaskQueue { starts, goals })
    }

    pub fn num_agents(&self) -> usize {
        self.starts.len()
    }
}

/// Random distinct starts and `length` random goals per agent, each goal in
/// the start's connected component and different from the one before it.
pub fn generate_task_queue_with_length(
    map: &GridMap,
    agents: usize,
    seed: u64,
    length: usize,
) -> Result<TaskQueue> {
    if agents == 0 {
        return Err(Error::Config("at least one agent is required".into()));
    }
    let cells: Vec<Vertex> = map.passable_vertices().collect();
    if cells.is_empty() {
        return Err(Error::NoPassableCells);
    }
    let comp = components(map);
    let mut by_comp: Vec<Vec<Vertex>> = Vec::new();
    for &v in &cells {
        let c = comp[map.index(v)].expect("passable");
        if by_comp.len() <= c {
            by_comp.resize(c + 1, Vec::new());
        }
        by_comp[c].push(v);
    }
    // Starts only where a goal different from the start exists.
    let mut candidates: Vec<Vertex> = cells
        .iter()
        .copied()
        .filter(|v| by_comp[comp[map.index(*v)].expect("passable")].len() > 1)
        .collect();
    if candidates.len() < agents {
        return Err(Error::NotEnoughAgents {
            requested: agents,
            available: candidates.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    let starts: Vec<Vertex> = candidates[..agents].to_vec();
    let goals = starts
        .iter()
        .map(|&s| {
            let pool = &by_comp[comp[map.index(s)].expect("passable")];
            let mut prev = s;
            (0..length)
                .map(|_| {
                    let mut g = pool[rng.random_range(0..pool.len())];
                    while g == prev {
                        g = pool[rng.random_range(0..pool.len())];
                    }
                    prev = g;
                    g
                })
                .collect()
        })
        .collect();
    Ok(TaskQueue { starts, goals })
}

pub fn generate_task_queue(map: &GridMap, agents: usize, seed: u64) -> Result<TaskQueue> {
    generate_task_queue_with_length(map, agents, seed, DEFAULT_QUEUE_LENGTH)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub sim_time: usize,
    /// Timesteps executed between replans.
    pub replan_period: usize,
    /// Conflict-resolution window of each replan.
    pub horizon: usize,
    pub omega1: f64,
    pub time_limit_secs: f64,
    /// Optional high-level node budget, for runs that must not depend on wall-clock time.
    pub node_limit: Option<usize>,
    pub low_level: LowLevelKind,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            sim_time: 2000,
            replan_period: 20,
            horizon: 40,
            omega1: 1.5,
            time_limit_secs: 5.0,
            node_limit: None,
            low_level: LowLevelKind::Astar,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replan_period == 0 {
            return Err(Error::Config("replan_period must be positive".into()));
        }
        if self.replan_period > self.horizon {
            return Err(Error::Config(format!(
                "replan_period ({}) must not exceed horizon ({})",
                self.replan_period, self.horizon
            )));
        }
        if self.sim_time < self.replan_period {
            return Err(Error::Config(format!(
                "sim_time ({}) must be at least replan_period ({})",
                self.sim_time, self.replan_period
            )));
        }
        if !(self.omega1 >= 1.0) {
            return Err(Error::Config(format!(
                "omega1 must be at least 1, got {}",
                self.omega1
            )));
        }
        if !(self.time_limit_secs > 0.0) {
            return Err(Error::Config("time_limit_secs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub positions: Vec<Vertex>,
    /// Agents that reached their current goal at this timestep.
    pub completed: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub start_time: usize,
    pub runtime_secs: f64,
    pub solved: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub frozen: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCompletion {
    pub agent: usize,
    pub goal: Vertex,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationLog {
    pub config: SimulationConfig,
    pub num_agents: usize,
    pub steps: Vec<StepRecord>,
    pub iterations: Vec<IterationRecord>,
    pub completions: Vec<TaskCompletion>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum LogLine {
    Header {
        config: SimulationConfig,
        num_agents: usize,
    },
    Iteration(IterationRecord),
    Step(StepRecord),
}

impl SimulationLog {
    /// Position of every agent at each timestep, `[t][agent]`.
    pub fn positions(&self) -> impl Iterator<Item = &[Vertex]> {
        self.steps.iter().map(|s| s.positions.as_slice())
    }

    /// JSON lines: a header, then iterations interleaved with the steps they produced.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        let line = |w: &mut dyn Write, l: &LogLine| -> Result<()> {
            serde_json::to_writer(&mut *w, l)?;
            w.write_all(b"\n")?;
            Ok(())
        };
        line(
            &mut w,
            &LogLine::Header {
                config: self.config.clone(),
                num_agents: self.num_agents,
            },
        )?;
        let mut iters = self.iterations.iter().peekable();
        for s in &self.steps {
            while let Some(it) = iters.next_if(|it| it.start_time <= s.t) {
                line(&mut w, &LogLine::Iteration(it.clone()))?;
            }
            line(&mut w, &LogLine::Step(s.clone()))?;
        }
        for it in iters {
            line(&mut w, &LogLine::Iteration(it.clone()))?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut header = None;
        let mut steps = Vec::new();
        let mut iterations = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine = serde_json::from_str(&line)
                .map_err(|e| Error::parse(n + 1, e.column(), e.to_string()))?;
            match parsed {
                LogLine::Header { config, num_agents } => header = Some((config, num_agents)),
                LogLine::Iteration(it) => iterations.push(it),
                LogLine::Step(s) => steps.push(s),
            }
        }
        let (config, num_agents) =
            header.ok_or_else(|| Error::parse(1, 1, "missing header record"))?;
        let completions = steps
            .iter()
            .flat_map(|s: &StepRecord| {
                s.completed.iter().map(move |&a| TaskCompletion {
                    agent: a,
                    goal: s.positions[a],
                    t: s.t,
                })
            })
            .collect();
        Ok(SimulationLog {
            config,
            num_agents,
            steps,
            iterations,
            completions,
        })
    }
}

/// Goals for one planning call: upcoming queue entries until their chained
/// distance covers the window. With an exhausted queue the agent rests.
fn plan_goals(
    gg: &GuidanceGraph,
    cache: &HeuristicCache,
    pos: Vertex,
    queue: &[Vertex],
    next: usize,
    window: usize,
) -> Result<Vec<Vertex>> {
    if next >= queue.len() {
        return Ok(vec![pos]);
    }
    let reach = window as f64 * gg.step_cost();
    let mut goals = Vec::new();
    let mut from = pos;
    let mut dist = 0.0;
    for &g in &queue[next..] {
        let d = cache.get(gg, g)?.get(gg.index(from));
        if !d.is_finite() {
            if goals.is_empty() {
                return Err(Error::Unreachable {
                    start: from,
                    goal: g,
                });
            }
            break;
        }
        goals.push(g);
        dist += d;
        from = g;
        if dist >= reach {
            break;
        }
    }
    Ok(goals)
}

/// Conflicting agents wait in place for the window; other agents keep their
/// paths unless these run into a frozen agent, in which case they are replanned
/// one by one around everything fixed so far, or frozen themselves.
#[allow(clippy::too_many_arguments)]
fn freeze_and_repair(
    gg: &GuidanceGraph,
    cache: &HeuristicCache,
    failure: &SolveFailure,
    plans: &[AgentPlan],
    positions: &[Vertex],
    t: usize,
    cfg: &SimulationConfig,
) -> Result<(Vec<TimedPath>, Vec<usize>)> {
    let n = plans.len();
    let end = t + cfg.horizon;
    let rest = |i: usize| {
        TimedPath::resting(
            i,
            positions[i],
            t,
            end,
            gg.wait_omega(gg.index(positions[i])),
        )
    };
    let mut frozen = vec![false; n];
    let mut paths: Vec<TimedPath> = match &failure.best_paths {
        Some(p) => p.clone(),
        None => {
            frozen.fill(true);
            (0..n).map(rest).collect()
        }
    };
    for c in &failure.best_conflicts {
        frozen[c.a1] = true;
        frozen[c.a2] = true;
    }
    for i in 0..n {
        if frozen[i] {
            paths[i] = rest(i);
        }
    }
    loop {
        let frozen_cells: HashSet<Vertex> = (0..n)
            .filter(|&i| frozen[i])
            .map(|i| positions[i])
            .collect();
        let hit = (0..n).find(|&i| {
            !frozen[i] && (t..=end).any(|k| frozen_cells.contains(&paths[i].vertex_at(k)))
        });
        let Some(i) = hit else { break };
        let mut table = ConstraintTable::new();
        for (j, p) in paths.iter().enumerate() {
            if j == i {
                continue;
            }
            for k in t + 1..=end {
                let (a, b) = (p.vertex_at(k - 1), p.vertex_at(k));
                table.block_vertex(gg.index(b), k);
                if a != b {
                    table.block_edge(gg.index(b), gg.index(a), k - 1);
                }
            }
        }
        let hs = plans[i]
            .goals
            .iter()
            .map(|&g| cache.get(gg, g))
            .collect::<Result<Vec<_>>>()?;
        let req = LowLevelRequest::new(i, positions[i], plans[i].goals.clone(), hs, &table)
            .start_time(t)
            .horizon(Some(end))
            .omega1(cfg.omega1);
        match spacetime_astar(gg, &req) {
            Ok(out) => paths[i] = out.path,
            Err(_) => {
                frozen[i] = true;
                paths[i] = rest(i);
            }
        }
    }
    Ok((paths, (0..n).filter(|&i| frozen[i]).collect()))
}

/// Runs the rolling-horizon simulation on `gg` with the tasks of `queue`.
pub fn rhcr_run(
    gg: &GuidanceGraph,
    queue: &TaskQueue,
    cfg: &SimulationConfig,
) -> Result<SimulationLog> {
    cfg.validate()?;
    TaskQueue::new(gg.map(), queue.starts.clone(), queue.goals.clone())?;
    let n = queue.num_agents();
    let cache = HeuristicCache::new();
    let cbs_cfg = CbsConfig {
        omega1: cfg.omega1,
        time_limit_secs: cfg.time_limit_secs,
        horizon: Some(cfg.horizon),
        low_level: cfg.low_level,
        node_limit: cfg.node_limit,
    };
    let cbs = Cbs::new(gg, &cache, cbs_cfg);

    let mut positions = queue.starts.clone();
    let mut next = vec![0usize; n];
    let mut steps = Vec::with_capacity(cfg.sim_time + 1);
    let mut iterations = Vec::new();
    let mut completions = Vec::new();

    let complete = |t: usize,
                    positions: &[Vertex],
                    next: &mut [usize],
                    completions: &mut Vec<TaskCompletion>| {
        let mut done = Vec::new();
        for i in 0..n {
            if queue.goals[i].get(next[i]) == Some(&positions[i]) {
                completions.push(TaskCompletion {
                    agent: i,
                    goal: positions[i],
                    t,
                });
                next[i] += 1;
                done.push(i);
            }
        }
        done
    };
    let done = complete(0, &positions, &mut next, &mut completions);
    steps.push(StepRecord {
        t: 0,
        positions: positions.clone(),
        completed: done,
    });

    let mut t = 0;
    while t < cfg.sim_time {
        let plans = (0..n)
            .map(|i| {
                Ok(AgentPlan {
                    agent: i,
                    start: positions[i],
                    goals: plan_goals(
                        gg,
                        &cache,
                        positions[i],
                        &queue.goals[i],
                        next[i],
                        cfg.horizon,
                    )?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (paths, record) = match cbs.solve(&plans, t, &ConstraintTable::new()) {
            Ok(sol) => (
                sol.paths,
                IterationRecord {
                    start_time: t,
                    runtime_secs: sol.stats.runtime_secs,
                    solved: true,
                    failure: None,
                    frozen: Vec::new(),
                },
            ),
            Err(failure) => {
                let (paths, frozen) =
                    freeze_and_repair(gg, &cache, &failure, &plans, &positions, t, cfg)?;
                tracing::debug!(t, ?failure.reason, frozen = frozen.len(), "replan failed");
                (
                    paths,
                    IterationRecord {
                        start_time: t,
                        runtime_secs: cfg.time_limit_secs,
                        solved: false,
                        failure: Some(format!("{:?}", failure.reason).to_lowercase()),
                        frozen,
                    },
                )
            }
        };
        iterations.push(record);
        let run = cfg.replan_period.min(cfg.sim_time - t);
        for k in 1..=run {
            for (i, p) in paths.iter().enumerate() {
                positions[i] = p.vertex_at(t + k);
            }
            let done = complete(t + k, &positions, &mut next, &mut completions);
            steps.push(StepRecord {
                t: t + k,
                positions: positions.clone(),
                completed: done,
            });
        }
        t += run;
    }
    Ok(SimulationLog {
        config: cfg.clone(),
        num_agents: n,
        steps,
        iterations,
        completions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub throughput: f64,
    pub mean_runtime_secs: f64,
    pub completed_tasks: usize,
    pub iterations: usize,
    pub failed_iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ua_conflicts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ua_conflicts_per_timestep: Option<f64>,
}

pub fn compute_metrics(log: &SimulationLog, ua_conflicts: Option<usize>) -> Metrics {
    let sim_time = log.config.sim_time.max(1) as f64;
    let runtimes: Vec<f64> = log.iterations.iter().map(|i| i.runtime_secs).collect();
    let mean_runtime_secs = if runtimes.is_empty() {
        0.0
    } else {
        runtimes.iter().sum::<f64>() / runtimes.len() as f64
    };
    Metrics {
        throughput: log.completions.len() as f64 / sim_time,
        mean_runtime_secs,
        completed_tasks: log.completions.len(),
        iterations: log.iterations.len(),
        failed_iterations: log.iterations.iter().filter(|i| !i.solved).count(),
        ua_conflicts,
        ua_conflicts_per_timestep: ua_conflicts.map(|c| c as f64 / sim_time),
    }
}
