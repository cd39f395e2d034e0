//! Bounded-suboptimal MAPF on guidance graphs.
//!
//! The high level is conflict-based search with a focal list (ECBS style):
//! it expands, among the nodes whose cost is within `omega1` of the best lower
//! bound, the one with the fewest conflicts. Each agent is planned by a focal
//! space-time A* or by safe-interval path planning.
//!
//! Times are absolute timesteps. A path for one-shot MAPF ends on its goal and
//! the agent rests there afterwards; in windowed (rolling-horizon) mode a path
//! may stop anywhere once it reaches the horizon, its cost then including the
//! heuristic estimate of the rest.

mod astar;
mod cbs;
mod conflicts;
mod constraints;
mod focal;
mod request;
mod sipp;

use serde::{Deserialize, Serialize};

use crate::world::{Action, Vertex};

pub use astar::spacetime_astar;
pub use cbs::{cbs_solve, AgentPlan, Cbs, CbsConfig, FailureReason, LowLevelKind, SolveFailure};
pub use conflicts::{count_conflicts_between, detect_conflicts, AgentConflict, ConflictKind};
pub use constraints::{AvoidanceTable, Constraint, ConstraintKind, ConstraintTable};
pub use request::{LowLevelOutcome, LowLevelRequest, SearchFailure};
pub use sipp::{safe_intervals, sipp, SafeInterval};

/// A timed path: `vertices[k]` is occupied at time `start_time + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedPath {
    pub agent: usize,
    pub start_time: usize,
    pub vertices: Vec<Vertex>,
    pub actions: Vec<Action>,
    /// Cost on the guidance graph (plus the remaining estimate for windowed paths).
    pub cost: f64,
    /// Number of actions, i.e. the cost under unit step costs.
    pub unit_cost: usize,
}

impl TimedPath {
    /// Builds a path from consecutive vertices, deriving the actions.
    pub fn from_vertices(
        agent: usize,
        start_time: usize,
        vertices: Vec<Vertex>,
        cost: f64,
    ) -> Self {
        let actions = vertices
            .windows(2)
            .map(|w| Action::between(w[0], w[1]).expect("consecutive path vertices are adjacent"))
            .collect::<Vec<_>>();
        let unit_cost = actions.len();
        TimedPath {
            agent,
            start_time,
            vertices,
            actions,
            cost,
            unit_cost,
        }
    }

    /// A path that stays at `v` from `start_time` through `end_time`.
    pub fn resting(
        agent: usize,
        v: Vertex,
        start_time: usize,
        end_time: usize,
        wait_cost: f64,
    ) -> Self {
        let steps = end_time.saturating_sub(start_time);
        TimedPath {
            agent,
            start_time,
            vertices: vec![v; steps + 1],
            actions: vec![Action::Wait; steps],
            cost: steps as f64 * wait_cost,
            unit_cost: steps,
        }
    }

    pub fn end_time(&self) -> usize {
        self.start_time + self.vertices.len() - 1
    }

    pub fn first(&self) -> Vertex {
        self.vertices[0]
    }

    pub fn last(&self) -> Vertex {
        *self.vertices.last().expect("paths are never empty")
    }

    /// Vertex at time `t`; the agent rests at its last vertex after the path ends.
    pub fn vertex_at(&self, t: usize) -> Vertex {
        if t <= self.start_time {
            return self.vertices[0];
        }
        let k = (t - self.start_time).min(self.vertices.len() - 1);
        self.vertices[k]
    }
}

/// Search effort counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub high_level_expanded: usize,
    pub high_level_generated: usize,
    pub low_level_calls: usize,
    pub low_level_expanded: usize,
    /// Wall-clock seconds; excluded from exported documents.
    #[serde(skip)]
    pub runtime_secs: f64,
}

/// A conflict-free set of paths, one per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub paths: Vec<TimedPath>,
    /// Sum of path costs on the guidance graph.
    pub cost: f64,
    /// Sum of path lengths.
    pub unit_cost: usize,
    pub stats: SolverStats,
}

impl Solution {
    pub fn new(paths: Vec<TimedPath>, stats: SolverStats) -> Self {
        let cost = paths.iter().map(|p| p.cost).sum();
        let unit_cost = paths.iter().map(|p| p.unit_cost).sum();
        Solution {
            paths,
            cost,
            unit_cost,
            stats,
        }
    }

    /// Deterministic JSON export: paths, costs and search counters, no timings.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solutions always serialise")
    }

    pub fn from_json(text: &str) -> crate::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Cost of following `vertices` from `start_time` on `gg`, or `None` if some
/// step is not a transition of the graph.
pub fn path_cost(gg: &crate::guidance::GuidanceGraph, vertices: &[Vertex]) -> Option<f64> {
    vertices
        .windows(2)
        .map(|w| gg.omega_between(gg.index(w[0]), gg.index(w[1])))
        .sum()
}
