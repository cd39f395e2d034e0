//! Guidance graphs: the MAPF grid with every transition weighted by the step
//! cost plus a normalised flow cost that measures how strongly the move (or
//! wait) disagrees with the local motion pattern.

mod bound;
mod heuristic;

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::angle::angular_distance;
use crate::cliffmap::{CliffMap, Swgmm};
use crate::error::{Error, Result};
use crate::world::{Action, GridMap, Vertex};

pub use bound::{max_flow_ratio, verify_suboptimality_bound, AgentBound, BoundReport};
pub use heuristic::{precompute_heuristic, HeuristicCache, HeuristicTable};

/// How the observation count enters the flow cost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogGrouping {
    /// `ln(γ) · Σ_j β_j d_j`
    #[default]
    ScaleByLogCount,
    /// `max(0, ln(γ · Σ_j β_j d_j))`
    LogOfScaledSum,
}

/// Direction and speed of a move action.
pub fn action_velocity(action: Action) -> Result<(f64, f64)> {
    match action {
        Action::Right => Ok((0.0, 1.0)),
        Action::Up => Ok((FRAC_PI_2, 1.0)),
        Action::Left => Ok((PI, 1.0)),
        Action::Down => Ok((1.5 * PI, 1.0)),
        Action::Wait => Err(Error::WaitHasNoAngle),
    }
}

/// Weighted Mahalanobis distance between `velocity` and the mixture, using the
/// shortest angular distance for the direction component.
pub fn mixture_distance(model: &Swgmm, velocity: (f64, f64)) -> f64 {
    model
        .components()
        .iter()
        .map(|(beta, d)| {
            let delta = (
                angular_distance(d.mu_theta(), velocity.0),
                d.mu_rho() - velocity.1,
            );
            beta * d.sigma().mahalanobis_sq(delta).max(0.0).sqrt()
        })
        .sum()
}

fn scale(distance: f64, gamma: usize, grouping: LogGrouping) -> f64 {
    if gamma == 0 {
        return 0.0;
    }
    match grouping {
        LogGrouping::ScaleByLogCount => (gamma as f64).ln() * distance,
        LogGrouping::LogOfScaledSum => {
            let v = gamma as f64 * distance;
            if v > 1.0 {
                v.ln()
            } else {
                0.0
            }
        }
    }
}

/// Un-normalised flow cost of a move action.
pub fn flow_cost_raw(action: Action, model: &Swgmm, gamma: usize) -> Result<f64> {
    flow_cost_raw_with(action, model, gamma, LogGrouping::default())
}

pub fn flow_cost_raw_with(
    action: Action,
    model: &Swgmm,
    gamma: usize,
    grouping: LogGrouping,
) -> Result<f64> {
    let velocity = action_velocity(action)?;
    Ok(scale(mixture_distance(model, velocity), gamma, grouping))
}

/// Flow cost of waiting: the mean over the four move directions with the
/// speed set to zero.
pub fn wait_cost(model: &Swgmm, gamma: usize) -> Result<f64> {
    wait_cost_with(model, gamma, LogGrouping::default())
}

pub fn wait_cost_with(model: &Swgmm, gamma: usize, grouping: LogGrouping) -> Result<f64> {
    let mut total = 0.0;
    for a in Action::MOVES {
        let (theta, _) = action_velocity(a)?;
        total += scale(mixture_distance(model, (theta, 0.0)), gamma, grouping);
    }
    Ok(total / 4.0)
}

/// Min-max normalisation into `[0, 1]`; all-equal inputs map to zero.
pub fn normalize_costs(raw: &[f64]) -> Vec<f64> {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if !(range > 0.0) {
        return vec![0.0; raw.len()];
    }
    raw.iter()
        .map(|x| ((x - min) / range).clamp(0.0, 1.0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub action: Action,
    pub to: usize,
    pub omega: f64,
}

/// One exported edge: source cell, action and weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRow {
    pub x: usize,
    pub y: usize,
    pub action: Action,
    pub omega: f64,
}

/// Directed, weighted transition graph over the passable cells of a map.
#[derive(Debug, Clone)]
pub struct GuidanceGraph {
    map: GridMap,
    step_cost: f64,
    /// Per cell, the edge for each action slot (Right, Up, Left, Down, Wait).
    edges: Vec<[Option<Edge>; 5]>,
}

impl GuidanceGraph {
    /// Every transition costs `step_cost`: plain MAPF.
    pub fn uniform(map: &GridMap, step_cost: f64) -> Result<Self> {
        GuidanceGraph::with_flow(map, step_cost, |_, _| 0.0)
    }

    fn with_flow(
        map: &GridMap,
        step_cost: f64,
        mut flow: impl FnMut(Vertex, Action) -> f64,
    ) -> Result<Self> {
        if !(step_cost > 0.0 && step_cost.is_finite()) {
            return Err(Error::Config(format!(
                "step cost must be positive, got {step_cost}"
            )));
        }
        let mut edges = vec![[None; 5]; map.num_cells()];
        for v in map.passable_vertices() {
            let slot = &mut edges[map.index(v)];
            for (action, to) in map.neighbors(v)? {
                slot[action.index()] = Some(Edge {
                    action,
                    to: map.index(to),
                    omega: step_cost + flow(v, action),
                });
            }
        }
        Ok(GuidanceGraph {
            map: map.clone(),
            step_cost,
            edges,
        })
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn step_cost(&self) -> f64 {
        self.step_cost
    }

    pub fn num_cells(&self) -> usize {
        self.edges.len()
    }

    pub fn index(&self, v: Vertex) -> usize {
        self.map.index(v)
    }

    pub fn vertex(&self, index: usize) -> Vertex {
        self.map.vertex(index)
    }

    pub fn is_passable(&self, index: usize) -> bool {
        self.edges[index][Action::Wait.index()].is_some()
    }

    /// Outgoing edges of cell `index` in action order.
    pub fn edges(&self, index: usize) -> impl Iterator<Item = &Edge> + '_ {
        self.edges[index].iter().flatten()
    }

    pub fn edge(&self, index: usize, action: Action) -> Option<&Edge> {
        self.edges[index][action.index()].as_ref()
    }

    /// Weight of the transition `from -> to`, if the cells are adjacent (or equal).
    pub fn omega_between(&self, from: usize, to: usize) -> Option<f64> {
        let action = Action::between(self.map.vertex(from), self.map.vertex(to))?;
        self.edge(from, action).map(|e| e.omega)
    }

    pub fn wait_omega(&self, index: usize) -> f64 {
        self.edge(index, Action::Wait)
            .map_or(f64::INFINITY, |e| e.omega)
    }

    pub fn all_edges(&self) -> impl Iterator<Item = (usize, &Edge)> + '_ {
        self.edges
            .iter()
            .enumerate()
            .flat_map(|(i, slots)| slots.iter().flatten().map(move |e| (i, e)))
    }

    pub fn export_rows(&self) -> Vec<EdgeRow> {
        self.all_edges()
            .map(|(i, e)| {
                let v = self.map.vertex(i);
                EdgeRow {
                    x: v.x,
                    y: v.y,
                    action: e.action,
                    omega: e.omega,
                }
            })
            .collect()
    }

    /// Writes the edge rows as `x,y,action,omega` CSV.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        for row in self.export_rows() {
            csv.serialize(row)?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Options for [`build_guidance_graph_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub log_grouping: LogGrouping,
}

/// Builds the flow-aware guidance graph: each edge weighs `step_cost` plus the
/// normalised flow cost of its action at the source cell.
pub fn build_guidance_graph(
    map: &GridMap,
    cliff: &CliffMap,
    step_cost: f64,
) -> Result<GuidanceGraph> {
    build_guidance_graph_with(map, cliff, step_cost, GuidanceConfig::default())
}

pub fn build_guidance_graph_with(
    map: &GridMap,
    cliff: &CliffMap,
    step_cost: f64,
    cfg: GuidanceConfig,
) -> Result<GuidanceGraph> {
    if !cliff.fits(map) {
        return Err(Error::Config(format!(
            "motion map is {}x{} but the grid is {}x{}",
            cliff.width(),
            cliff.height(),
            map.width(),
            map.height()
        )));
    }
    // Raw costs of every transition, pooled over moves and waits.
    let mut keys = Vec::new();
    let mut raw = Vec::new();
    for v in map.passable_vertices() {
        for (action, _) in map.neighbors(v)? {
            let cost = match cliff.model(v) {
                Some(model) if action == Action::Wait => {
                    wait_cost_with(model, cliff.gamma(v), cfg.log_grouping)?
                }
                Some(model) => flow_cost_raw_with(action, model, cliff.gamma(v), cfg.log_grouping)?,
                None => 0.0,
            };
            keys.push((map.index(v), action));
            raw.push(cost);
        }
    }
    let normalized = normalize_costs(&raw);
    let mut lookup = vec![[0.0; 5]; map.num_cells()];
    for ((i, action), n) in keys.into_iter().zip(normalized) {
        lookup[i][action.index()] = n;
    }
    GuidanceGraph::with_flow(map, step_cost, |v, a| lookup[map.index(v)][a.index()])
}
