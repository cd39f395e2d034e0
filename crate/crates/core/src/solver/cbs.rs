use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant};

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use super::conflicts::{conflicts_among, sort_conflicts};
use super::focal::EPS;
use super::{
    sipp, spacetime_astar, AgentConflict, AvoidanceTable, ConflictKind, Constraint,
    ConstraintTable, LowLevelOutcome, LowLevelRequest, SearchFailure, Solution, SolverStats,
    TimedPath,
};
use crate::guidance::{GuidanceGraph, HeuristicCache};
use crate::world::{Scenario, Vertex};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LowLevelKind {
    #[default]
    Astar,
    Sipp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CbsConfig {
    pub omega1: f64,
    pub time_limit_secs: f64,
    /// Window length in timesteps; conflicts after `start + horizon` are ignored.
    pub horizon: Option<usize>,
    pub low_level: LowLevelKind,
    pub node_limit: Option<usize>,
}

impl Default for CbsConfig {
    fn default() -> Self {
        CbsConfig {
            omega1: 1.2,
            time_limit_secs: 5.0,
            horizon: None,
            low_level: LowLevelKind::Astar,
            node_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureReason {
    Timeout,
    NodeLimit,
    /// Some agent has no path at all, or every branch of the search was pruned.
    Infeasible,
    Invalid(String),
}

#[derive(Debug, Clone)]
pub struct SolveFailure {
    pub reason: FailureReason,
    pub stats: SolverStats,
    /// Paths of the generated node with the fewest conflicts, if any.
    pub best_paths: Option<Vec<TimedPath>>,
    pub best_conflicts: Vec<AgentConflict>,
}

impl SolveFailure {
    fn bare(reason: FailureReason, stats: SolverStats) -> Self {
        SolveFailure {
            reason,
            stats,
            best_paths: None,
            best_conflicts: Vec::new(),
        }
    }
}

/// One agent's task for a planning call: visit `goals` in order from `start`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentPlan {
    pub agent: usize,
    pub start: Vertex,
    pub goals: Vec<Vertex>,
}

struct HlNode {
    constraints: Vec<Constraint>,
    paths: Vec<Arc<TimedPath>>,
    lbs: Vec<f64>,
    conflicts: Vec<AgentConflict>,
    cost: f64,
    lb: f64,
}

/// Conflict-based search with focal lists at both levels.
pub struct Cbs<'a> {
    gg: &'a GuidanceGraph,
    cache: &'a HeuristicCache,
    cfg: CbsConfig,
}

impl<'a> Cbs<'a> {
    pub fn new(gg: &'a GuidanceGraph, cache: &'a HeuristicCache, cfg: CbsConfig) -> Self {
        Cbs { gg, cache, cfg }
    }

    pub fn config(&self) -> &CbsConfig {
        &self.cfg
    }

    /// Plans all `agents` from `start_time`. `base` holds constraints applied to
    /// every agent, such as cells occupied by frozen agents.
    pub fn solve(
        &self,
        agents: &[AgentPlan],
        start_time: usize,
        base: &ConstraintTable,
    ) -> Result<Solution, SolveFailure> {
        let started = Instant::now();
        let mut stats = SolverStats::default();
        let result = self.search(agents, start_time, base, &mut stats, started);
        stats.runtime_secs = started.elapsed().as_secs_f64();
        match result {
            Ok(paths) => Ok(Solution::new(paths, stats)),
            Err(mut f) => {
                f.stats = stats;
                Err(f)
            }
        }
    }

    fn search(
        &self,
        agents: &[AgentPlan],
        start_time: usize,
        base: &ConstraintTable,
        stats: &mut SolverStats,
        started: Instant,
    ) -> Result<Vec<TimedPath>, SolveFailure> {
        let cfg = &self.cfg;
        if !(cfg.omega1 >= 1.0) {
            return Err(SolveFailure::bare(
                FailureReason::Invalid(format!("omega1 must be at least 1, got {}", cfg.omega1)),
                SolverStats::default(),
            ));
        }
        if !(cfg.time_limit_secs > 0.0) {
            return Err(SolveFailure::bare(
                FailureReason::Invalid("time limit must be positive".into()),
                SolverStats::default(),
            ));
        }
        let deadline = started + Duration::from_secs_f64(cfg.time_limit_secs.min(1e9));
        let horizon = cfg.horizon.map(|w| start_time + w);
        let mut heuristics = Vec::with_capacity(agents.len());
        for a in agents {
            let mut hs = Vec::with_capacity(a.goals.len());
            for &g in &a.goals {
                match self.cache.get(self.gg, g) {
                    Ok(h) => hs.push(h),
                    Err(e) => {
                        return Err(SolveFailure::bare(
                            FailureReason::Invalid(e.to_string()),
                            SolverStats::default(),
                        ))
                    }
                }
            }
            heuristics.push(hs);
        }
        let slot: HashMap<usize, usize> = agents
            .iter()
            .enumerate()
            .map(|(i, a)| (a.agent, i))
            .collect();

        let plan = |i: usize,
                    constraints: &[Constraint],
                    avoid: &AvoidanceTable,
                    stats: &mut SolverStats|
         -> Result<LowLevelOutcome, SearchFailure> {
            let mut table = ConstraintTable::for_agent(self.gg, agents[i].agent, constraints);
            table.merge(base);
            let req = LowLevelRequest::new(
                agents[i].agent,
                agents[i].start,
                agents[i].goals.clone(),
                heuristics[i].clone(),
                &table,
            )
            .start_time(start_time)
            .avoidance(avoid)
            .omega1(cfg.omega1)
            .horizon(horizon)
            .deadline(Some(deadline));
            stats.low_level_calls += 1;
            let out = match cfg.low_level {
                LowLevelKind::Astar => spacetime_astar(self.gg, &req),
                LowLevelKind::Sipp => sipp(self.gg, &req),
            };
            if let Ok(o) = &out {
                stats.low_level_expanded += o.expanded;
            }
            out
        };
        let low_level_failure = |e: SearchFailure| match e {
            SearchFailure::Budget => FailureReason::Timeout,
            SearchFailure::NoPath | SearchFailure::StartBlocked => FailureReason::Infeasible,
            SearchFailure::Malformed(m) => FailureReason::Invalid(m.to_string()),
        };

        // Root: agents planned in order, each avoiding those already planned.
        let mut root_paths: Vec<Arc<TimedPath>> = Vec::with_capacity(agents.len());
        let mut lbs = Vec::with_capacity(agents.len());
        let mut avoid = AvoidanceTable::from_paths(self.gg, std::iter::empty(), None, horizon);
        for i in 0..agents.len() {
            let out = plan(i, &[], &avoid, stats)
                .map_err(|e| SolveFailure::bare(low_level_failure(e), SolverStats::default()))?;
            avoid.add_path(self.gg, &out.path);
            lbs.push(out.lower_bound);
            root_paths.push(Arc::new(out.path));
        }
        let refs: Vec<&TimedPath> = root_paths.iter().map(|p| p.as_ref()).collect();
        let conflicts = conflicts_among(&refs, horizon);
        let root = HlNode {
            constraints: Vec::new(),
            cost: root_paths.iter().map(|p| p.cost).sum(),
            lb: lbs.iter().sum(),
            paths: root_paths,
            lbs,
            conflicts,
        };

        let mut nodes = vec![root];
        let mut open: BTreeSet<(OrderedFloat<f64>, usize)> = BTreeSet::new();
        let mut pending: BTreeSet<(OrderedFloat<f64>, usize)> = BTreeSet::new();
        let mut focal: BTreeSet<(usize, OrderedFloat<f64>, usize)> = BTreeSet::new();
        open.insert((OrderedFloat(nodes[0].lb), 0));
        pending.insert((OrderedFloat(nodes[0].cost), 0));
        stats.high_level_generated = 1;
        let mut best = 0usize;

        let fail = |reason: FailureReason, nodes: &[HlNode], best: usize| SolveFailure {
            reason,
            stats: SolverStats::default(),
            best_paths: Some(
                nodes[best]
                    .paths
                    .iter()
                    .map(|p| p.as_ref().clone())
                    .collect(),
            ),
            best_conflicts: nodes[best].conflicts.clone(),
        };

        loop {
            if Instant::now() >= deadline {
                return Err(fail(FailureReason::Timeout, &nodes, best));
            }
            if cfg
                .node_limit
                .is_some_and(|n| stats.high_level_expanded >= n)
            {
                return Err(fail(FailureReason::NodeLimit, &nodes, best));
            }
            let Some(&(OrderedFloat(lb_min), _)) = open.first() else {
                return Err(fail(FailureReason::Infeasible, &nodes, best));
            };
            let bound = cfg.omega1 * lb_min + EPS * lb_min.abs().max(1.0);
            while let Some(&(OrderedFloat(c), id)) = pending.first() {
                if c > bound {
                    break;
                }
                pending.remove(&(OrderedFloat(c), id));
                focal.insert((nodes[id].conflicts.len(), OrderedFloat(c), id));
            }
            let id = match focal.first().copied() {
                Some(k) => {
                    focal.remove(&k);
                    k.2
                }
                None => {
                    let (_, id) = *open.first().expect("open is non-empty");
                    pending.remove(&(OrderedFloat(nodes[id].cost), id));
                    id
                }
            };
            open.remove(&(OrderedFloat(nodes[id].lb), id));

            if nodes[id].conflicts.is_empty() {
                return Ok(nodes[id].paths.iter().map(|p| p.as_ref().clone()).collect());
            }
            stats.high_level_expanded += 1;

            let conflict = nodes[id].conflicts[0];
            let branches = match conflict.kind {
                ConflictKind::Vertex { v } => [
                    Constraint::vertex(conflict.a1, v, conflict.timestep),
                    Constraint::vertex(conflict.a2, v, conflict.timestep),
                ],
                ConflictKind::Edge { from, to } => [
                    Constraint::edge(conflict.a1, from, to, conflict.timestep),
                    Constraint::edge(conflict.a2, to, from, conflict.timestep),
                ],
            };
            for c in branches {
                let i = slot[&c.agent];
                let parent = &nodes[id];
                let mut constraints = parent.constraints.clone();
                constraints.push(c);
                let avoid = AvoidanceTable::from_paths(
                    self.gg,
                    parent.paths.iter().map(|p| p.as_ref()),
                    Some(c.agent),
                    horizon,
                );
                let out = match plan(i, &constraints, &avoid, stats) {
                    Ok(o) => o,
                    Err(SearchFailure::NoPath | SearchFailure::StartBlocked) => continue,
                    Err(SearchFailure::Budget) => {
                        return Err(fail(FailureReason::Timeout, &nodes, best))
                    }
                    Err(SearchFailure::Malformed(m)) => {
                        return Err(fail(FailureReason::Invalid(m.to_string()), &nodes, best))
                    }
                };
                let parent = &nodes[id];
                let mut paths = parent.paths.clone();
                let mut lbs = parent.lbs.clone();
                lbs[i] = lbs[i].max(out.lower_bound);
                paths[i] = Arc::new(out.path);
                let mut conflicts: Vec<AgentConflict> = parent
                    .conflicts
                    .iter()
                    .filter(|k| k.a1 != c.agent && k.a2 != c.agent)
                    .copied()
                    .collect();
                for (j, p) in paths.iter().enumerate() {
                    if j != i {
                        conflicts
                            .extend(conflicts_among(&[paths[i].as_ref(), p.as_ref()], horizon));
                    }
                }
                sort_conflicts(&mut conflicts);
                let node = HlNode {
                    constraints,
                    cost: paths.iter().map(|p| p.cost).sum(),
                    lb: lbs.iter().sum(),
                    paths,
                    lbs,
                    conflicts,
                };
                let nid = nodes.len();
                open.insert((OrderedFloat(node.lb), nid));
                if node.cost <= bound {
                    focal.insert((node.conflicts.len(), OrderedFloat(node.cost), nid));
                } else {
                    pending.insert((OrderedFloat(node.cost), nid));
                }
                if node.conflicts.len() < nodes[best].conflicts.len() {
                    best = nid;
                }
                nodes.push(node);
                stats.high_level_generated += 1;
            }
        }
    }
}

/// Solves a one-shot scenario from time 0.
pub fn cbs_solve(
    gg: &GuidanceGraph,
    scenario: &Scenario,
    cfg: &CbsConfig,
) -> Result<Solution, SolveFailure> {
    let cache = HeuristicCache::new();
    let agents: Vec<AgentPlan> = scenario
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| AgentPlan {
            agent: i,
            start: a.start,
            goals: vec![a.goal],
        })
        .collect();
    Cbs::new(gg, &cache, cfg.clone()).solve(&agents, 0, &ConstraintTable::new())
}
