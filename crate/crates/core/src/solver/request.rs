use std::sync::Arc;
use std::time::Instant;

use super::{AvoidanceTable, ConstraintTable, TimedPath};
use crate::guidance::{GuidanceGraph, HeuristicTable};
use crate::world::Vertex;

/// One single-agent planning problem.
#[derive(Debug, Clone)]
pub struct LowLevelRequest<'a> {
    pub agent: usize,
    pub start: Vertex,
    pub start_time: usize,
    /// Goals to visit in order; the path ends on the last one.
    pub goals: Vec<Vertex>,
    /// Cost-to-go tables, one per goal.
    pub heuristics: Vec<Arc<HeuristicTable>>,
    pub constraints: &'a ConstraintTable,
    pub avoidance: Option<&'a AvoidanceTable>,
    /// Focal suboptimality factor; 1 gives optimal paths.
    pub omega1: f64,
    /// In windowed mode, search stops at this absolute time.
    pub horizon: Option<usize>,
    pub expansion_limit: Option<usize>,
    pub deadline: Option<Instant>,
}

impl<'a> LowLevelRequest<'a> {
    pub fn new(
        agent: usize,
        start: Vertex,
        goals: Vec<Vertex>,
        heuristics: Vec<Arc<HeuristicTable>>,
        constraints: &'a ConstraintTable,
    ) -> Self {
        LowLevelRequest {
            agent,
            start,
            start_time: 0,
            goals,
            heuristics,
            constraints,
            avoidance: None,
            omega1: 1.0,
            horizon: None,
            expansion_limit: None,
            deadline: None,
        }
    }

    pub fn start_time(mut self, t: usize) -> Self {
        self.start_time = t;
        self
    }

    pub fn avoidance(mut self, table: &'a AvoidanceTable) -> Self {
        self.avoidance = Some(table);
        self
    }

    pub fn omega1(mut self, w: f64) -> Self {
        self.omega1 = w;
        self
    }

    pub fn horizon(mut self, h: Option<usize>) -> Self {
        self.horizon = h;
        self
    }

    pub fn expansion_limit(mut self, n: Option<usize>) -> Self {
        self.expansion_limit = n;
        self
    }

    pub fn deadline(mut self, d: Option<Instant>) -> Self {
        self.deadline = d;
        self
    }
}

#[derive(Debug, Clone)]
pub struct LowLevelOutcome {
    pub path: TimedPath,
    /// Lowest f-value on the open list when the path was found.
    pub lower_bound: f64,
    /// Conflicts with the avoidance table along the path.
    pub conflicts: u32,
    pub expanded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum SearchFailure {
    #[error("no path satisfies the constraints")]
    NoPath,
    #[error("search budget exhausted")]
    Budget,
    #[error("start vertex is blocked at the start time")]
    StartBlocked,
    #[error("malformed request: {0}")]
    Malformed(&'static str),
}

/// Goal-sequence bookkeeping shared by the searches.
pub(crate) struct Stages {
    goals: Vec<usize>,
    h: Vec<Arc<HeuristicTable>>,
    suffix: Vec<f64>,
}

impl Stages {
    pub(crate) fn new(gg: &GuidanceGraph, req: &LowLevelRequest) -> Result<Self, SearchFailure> {
        if req.goals.is_empty() {
            return Err(SearchFailure::Malformed("no goals"));
        }
        if req.goals.len() != req.heuristics.len() {
            return Err(SearchFailure::Malformed(
                "one heuristic table per goal is required",
            ));
        }
        if !(req.omega1 >= 1.0) {
            return Err(SearchFailure::Malformed("omega1 must be at least 1"));
        }
        let goals: Vec<usize> = req.goals.iter().map(|&g| gg.index(g)).collect();
        let n = goals.len();
        let mut suffix = vec![0.0; n];
        for s in (0..n.saturating_sub(1)).rev() {
            suffix[s] = suffix[s + 1] + req.heuristics[s + 1].get(goals[s]);
        }
        Ok(Stages {
            goals,
            h: req.heuristics.clone(),
            suffix,
        })
    }

    pub(crate) fn advance(&self, mut stage: usize, v: usize) -> usize {
        while stage < self.goals.len() && self.goals[stage] == v {
            stage += 1;
        }
        stage
    }

    /// Remaining cost through the outstanding goals, ending on the last one.
    pub(crate) fn h(&self, stage: usize, v: usize) -> f64 {
        let n = self.goals.len();
        if stage < n {
            self.h[stage].get(v) + self.suffix[stage]
        } else {
            self.h[n - 1].get(v)
        }
    }

    pub(crate) fn is_final(&self, stage: usize, v: usize) -> bool {
        stage == self.goals.len() && v == self.goals[stage - 1]
    }
}

/// Time beyond which neither constraints nor the avoidance table change.
pub(crate) fn time_cap(req: &LowLevelRequest) -> usize {
    let mut cap = req.start_time;
    if let Some(t) = req.constraints.max_time() {
        cap = cap.max(t);
    }
    if let Some(av) = req.avoidance {
        cap = cap.max(av.max_time());
    }
    if let Some(h) = req.horizon {
        cap = cap.max(h);
    }
    cap + 1
}
