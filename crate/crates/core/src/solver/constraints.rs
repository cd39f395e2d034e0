use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::TimedPath;
use crate::guidance::GuidanceGraph;
use crate::world::Vertex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ConstraintKind {
    /// The agent may not occupy `v` at `timestep`.
    Vertex { v: Vertex },
    /// The agent may not move `from -> to` departing at `timestep`.
    Edge { from: Vertex, to: Vertex },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Constraint {
    pub agent: usize,
    pub kind: ConstraintKind,
    pub timestep: usize,
}

impl Constraint {
    pub fn vertex(agent: usize, v: Vertex, timestep: usize) -> Self {
        Constraint {
            agent,
            kind: ConstraintKind::Vertex { v },
            timestep,
        }
    }

    pub fn edge(agent: usize, from: Vertex, to: Vertex, timestep: usize) -> Self {
        Constraint {
            agent,
            kind: ConstraintKind::Edge { from, to },
            timestep,
        }
    }
}

/// Per-agent constraint lookup over cell indices.
#[derive(Debug, Clone, Default)]
pub struct ConstraintTable {
    vertex: HashMap<usize, BTreeSet<usize>>,
    edge: HashSet<(usize, usize, usize)>,
    max_time: Option<usize>,
}

impl ConstraintTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Table of the constraints in `constraints` that apply to `agent`.
    pub fn for_agent(gg: &GuidanceGraph, agent: usize, constraints: &[Constraint]) -> Self {
        let mut table = Self::new();
        table.extend(gg, constraints.iter().filter(|c| c.agent == agent));
        table
    }

    pub fn extend<'a>(
        &mut self,
        gg: &GuidanceGraph,
        constraints: impl IntoIterator<Item = &'a Constraint>,
    ) {
        for c in constraints {
            match c.kind {
                ConstraintKind::Vertex { v } => self.block_vertex(gg.index(v), c.timestep),
                ConstraintKind::Edge { from, to } => {
                    self.block_edge(gg.index(from), gg.index(to), c.timestep)
                }
            }
        }
    }

    pub fn block_vertex(&mut self, v: usize, t: usize) {
        self.vertex.entry(v).or_default().insert(t);
        self.bump(t);
    }

    pub fn block_edge(&mut self, from: usize, to: usize, t: usize) {
        self.edge.insert((from, to, t));
        self.bump(t + 1);
    }

    fn bump(&mut self, t: usize) {
        self.max_time = Some(self.max_time.map_or(t, |m| m.max(t)));
    }

    pub fn merge(&mut self, other: &ConstraintTable) {
        for (&v, times) in &other.vertex {
            self.vertex
                .entry(v)
                .or_default()
                .extend(times.iter().copied());
        }
        self.edge.extend(other.edge.iter().copied());
        if let Some(t) = other.max_time {
            self.bump(t);
        }
    }

    pub fn vertex_blocked(&self, v: usize, t: usize) -> bool {
        self.vertex.get(&v).is_some_and(|s| s.contains(&t))
    }

    pub fn edge_blocked(&self, from: usize, to: usize, t: usize) -> bool {
        !self.edge.is_empty() && self.edge.contains(&(from, to, t))
    }

    /// Latest time at which `v` is blocked.
    pub fn last_vertex_block(&self, v: usize) -> Option<usize> {
        self.vertex.get(&v).and_then(|s| s.last().copied())
    }

    /// Whether `v` is blocked at some time strictly after `t`.
    pub fn blocked_after(&self, v: usize, t: usize) -> bool {
        self.last_vertex_block(v).is_some_and(|last| last > t)
    }

    /// Sorted times at which `v` is blocked.
    pub fn blocked_times(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.vertex
            .get(&v)
            .into_iter()
            .flat_map(|s| s.iter().copied())
    }

    /// Latest time touched by any constraint (edge constraints count their arrival).
    pub fn max_time(&self) -> Option<usize> {
        self.max_time
    }

    pub fn is_empty(&self) -> bool {
        self.vertex.is_empty() && self.edge.is_empty()
    }
}

/// Occupancy of other agents' paths, used to count prospective conflicts.
#[derive(Debug, Clone, Default)]
pub struct AvoidanceTable {
    occupied: HashMap<(usize, usize), u32>,
    moves: HashMap<(usize, usize, usize), u32>,
    /// Vertex and the time from which an agent rests there for good.
    resting: HashMap<usize, Vec<usize>>,
    max_time: usize,
    horizon: Option<usize>,
}

impl AvoidanceTable {
    /// Table of every path except `skip`'s; with a horizon, later times are ignored.
    pub fn from_paths<'a>(
        gg: &GuidanceGraph,
        paths: impl IntoIterator<Item = &'a TimedPath>,
        skip: Option<usize>,
        horizon: Option<usize>,
    ) -> Self {
        let mut table = AvoidanceTable {
            horizon,
            ..Default::default()
        };
        for p in paths {
            if Some(p.agent) == skip {
                continue;
            }
            table.add_path(gg, p);
        }
        table
    }

    pub fn add_path(&mut self, gg: &GuidanceGraph, path: &TimedPath) {
        let idx: Vec<usize> = path.vertices.iter().map(|&v| gg.index(v)).collect();
        let end = path.end_time();
        for (k, &v) in idx.iter().enumerate() {
            let t = path.start_time + k;
            if t < end {
                *self.occupied.entry((v, t)).or_default() += 1;
            }
            if k + 1 < idx.len() && idx[k + 1] != v {
                *self.moves.entry((v, idx[k + 1], t)).or_default() += 1;
            }
        }
        self.resting
            .entry(idx[idx.len() - 1])
            .or_default()
            .push(end);
        self.max_time = self.max_time.max(end);
    }

    fn counts(&self, t: usize) -> bool {
        self.horizon.is_none_or(|h| t <= h)
    }

    pub fn vertex_count(&self, v: usize, t: usize) -> u32 {
        if !self.counts(t) {
            return 0;
        }
        let moving = self.occupied.get(&(v, t)).copied().unwrap_or(0);
        let rest = self
            .resting
            .get(&v)
            .map_or(0, |ends| ends.iter().filter(|&&e| e <= t).count() as u32);
        moving + rest
    }

    /// Conflicts caused by the transition `(from, t) -> (to, t + 1)`.
    pub fn step_conflicts(&self, from: usize, to: usize, t: usize) -> u32 {
        let mut n = self.vertex_count(to, t + 1);
        if from != to && self.counts(t + 1) {
            n += self.moves.get(&(to, from, t)).copied().unwrap_or(0);
        }
        n
    }

    /// Time after which the table no longer changes.
    pub fn max_time(&self) -> usize {
        self.max_time
    }

    pub fn is_empty(&self) -> bool {
        self.resting.is_empty()
    }
}
