//! Path-length bound for bounded-suboptimal solutions on a guidance graph.
//!
//! If every flow cost is at most `omega2 · g_s`, a solution that is within
//! `omega1` of the optimum on the guidance graph costs at most
//! `(omega1 + omega1 · omega2)` times the unit-step optimum.

use serde::{Deserialize, Serialize};

use super::GuidanceGraph;
use crate::error::{Error, Result};
use crate::solver::Solution;

/// Smallest `omega2` with `omega_e - g_s <= omega2 · g_s` on every edge.
pub fn max_flow_ratio(gg: &GuidanceGraph) -> f64 {
    gg.all_edges()
        .map(|(_, e)| (e.omega - gg.step_cost()) / gg.step_cost())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentBound {
    pub agent: usize,
    pub cost: f64,
    pub unit_optimal: f64,
    pub bound: f64,
    /// `bound - cost`; negative values are informative only, the bound
    /// holds for the solution as a whole.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub omega1: f64,
    pub omega2: f64,
    pub factor: f64,
    pub agents: Vec<AgentBound>,
    pub total_cost: f64,
    pub total_bound: f64,
    pub total_slack: f64,
    pub holds: bool,
}

/// Checks `Σ cost <= (omega1 + omega1·omega2) · Σ unit_optimal`.
///
/// `unit_optimal` holds, per agent, its path length in a sum-of-costs optimal
/// solution under unit step costs (`g_s` multiples are applied here).
pub fn verify_suboptimality_bound(
    solution: &Solution,
    omega1: f64,
    omega2: f64,
    step_cost: f64,
    unit_optimal: &[f64],
) -> Result<BoundReport> {
    if !(omega1 >= 1.0) {
        return Err(Error::Config(format!(
            "omega1 must be at least 1, got {omega1}"
        )));
    }
    if !(omega2 >= 0.0) {
        return Err(Error::Config(format!(
            "omega2 must be non-negative, got {omega2}"
        )));
    }
    let factor = omega1 + omega1 * omega2;
    let mut agents = Vec::with_capacity(solution.paths.len());
    for (i, path) in solution.paths.iter().enumerate() {
        let length = *unit_optimal.get(i).ok_or(Error::MissingShortestLength(i))?;
        let bound = factor * length * step_cost;
        agents.push(AgentBound {
            agent: path.agent,
            cost: path.cost,
            unit_optimal: length,
            bound,
            slack: bound - path.cost,
        });
    }
    let total_cost: f64 = agents.iter().map(|a| a.cost).sum();
    let total_bound: f64 = agents.iter().map(|a| a.bound).sum();
    let tolerance = 1e-9 * total_bound.abs().max(1.0);
    Ok(BoundReport {
        omega1,
        omega2,
        factor,
        agents,
        total_cost,
        total_bound,
        total_slack: total_bound - total_cost,
        holds: total_cost <= total_bound + tolerance,
    })
}
