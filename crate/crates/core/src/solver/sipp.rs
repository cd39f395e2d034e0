use std::collections::HashMap;
use std::time::Instant;

use super::focal::{FocalQueue, EPS};
use super::request::{time_cap, Stages};
use super::{ConstraintTable, LowLevelOutcome, LowLevelRequest, SearchFailure, TimedPath};
use crate::guidance::GuidanceGraph;

/// Maximal run of timesteps `[start, end]` during which a vertex is free.
/// `end == usize::MAX` means the interval never closes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SafeInterval {
    pub start: usize,
    pub end: usize,
}

impl SafeInterval {
    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn is_unbounded(&self) -> bool {
        self.end == usize::MAX
    }
}

/// Safe intervals of cell `v` under the vertex constraints of `ct`.
pub fn safe_intervals(ct: &ConstraintTable, v: usize) -> Vec<SafeInterval> {
    let mut out = Vec::new();
    let mut start = 0usize;
    for b in ct.blocked_times(v) {
        if b > start {
            out.push(SafeInterval { start, end: b - 1 });
        }
        start = b + 1;
    }
    out.push(SafeInterval {
        start,
        end: usize::MAX,
    });
    out
}

const NONE: usize = usize::MAX;

struct Label {
    v: usize,
    interval: usize,
    stage: usize,
    t: usize,
    g: f64,
    h: f64,
    conflicts: u32,
    parent: usize,
    open: bool,
}

impl Label {
    fn f(&self) -> f64 {
        self.g + self.h
    }
}

struct Search<'r, 'a> {
    gg: &'r GuidanceGraph,
    req: &'r LowLevelRequest<'a>,
    stages: Stages,
    cap: usize,
    intervals: HashMap<usize, Vec<SafeInterval>>,
    labels: Vec<Label>,
    frontier: HashMap<(usize, usize, usize), Vec<usize>>,
    queue: FocalQueue,
}

impl Search<'_, '_> {
    fn intervals(&mut self, v: usize) -> Vec<SafeInterval> {
        let ct = self.req.constraints;
        self.intervals
            .entry(v)
            .or_insert_with(|| safe_intervals(ct, v))
            .clone()
    }

    /// `(t, g)` at `v` is no better than `(t0, g0)` if waiting from `t0` reaches it
    /// at no extra cost. Past the cap the environment is static, so times there
    /// are interchangeable.
    fn dominates(&self, v: usize, t0: usize, g0: f64, t: usize, g: f64) -> bool {
        if t0 >= self.cap && t >= self.cap {
            return g0 <= g + EPS;
        }
        t0 <= t && g0 + self.gg.wait_omega(v) * (t - t0) as f64 <= g + EPS
    }

    fn push(&mut self, label: Label) {
        let key = (label.v, label.interval, label.stage);
        let existing = self.frontier.entry(key).or_default().clone();
        for &id in &existing {
            let l = &self.labels[id];
            if self.dominates(label.v, l.t, l.g, label.t, label.g) {
                return;
            }
        }
        let mut kept = Vec::with_capacity(existing.len() + 1);
        for id in existing {
            let l = &self.labels[id];
            if l.open && self.dominates(label.v, label.t, label.g, l.t, l.g) {
                self.queue.remove(l.f(), l.g, l.conflicts, id);
                self.labels[id].open = false;
            } else {
                kept.push(id);
            }
        }
        let id = self.labels.len();
        self.queue.insert(label.f(), label.g, label.conflicts, id);
        self.labels.push(label);
        kept.push(id);
        self.frontier.insert(key, kept);
    }

    fn wait_conflicts(&self, v: usize, from: usize, to: usize) -> u32 {
        match self.req.avoidance {
            Some(av) => (from..to).map(|k| av.step_conflicts(v, v, k)).sum(),
            None => 0,
        }
    }

    fn expand(&mut self, id: usize) {
        let (v, iv, stage, t, g, c) = {
            let l = &self.labels[id];
            (l.v, l.interval, l.stage, l.t, l.g, l.conflicts)
        };
        let here = self.intervals(v)[iv];
        let w_v = self.gg.wait_omega(v);
        let horizon = self.req.horizon;

        if let Some(hz) = horizon {
            if t < hz && here.contains(hz) {
                let h = self.stages.h(stage, v);
                self.push(Label {
                    v,
                    interval: iv,
                    stage,
                    t: hz,
                    g: g + w_v * (hz - t) as f64,
                    h,
                    conflicts: c + self.wait_conflicts(v, t, hz),
                    parent: id,
                    open: true,
                });
            }
        }

        let edges: Vec<(usize, f64)> = self
            .gg
            .edges(v)
            .filter(|e| e.to != v)
            .map(|e| (e.to, e.omega))
            .collect();
        for (u, omega) in edges {
            let ns = self.stages.advance(stage, u);
            let nh = self.stages.h(ns, u);
            if !nh.is_finite() {
                continue;
            }
            let w_u = self.gg.wait_omega(u);
            let latest_arrival = here.end.saturating_add(1);
            for (iu, there) in self.intervals(u).into_iter().enumerate() {
                if there.start > latest_arrival {
                    break;
                }
                if there.end < t + 1 {
                    continue;
                }
                let lo = t.max(there.start.saturating_sub(1));
                let mut hi = here.end.min(there.end.saturating_sub(1));
                hi = hi.min(lo.max(self.cap));
                if let Some(hz) = horizon {
                    hi = hi.min(hz.saturating_sub(1));
                }
                if lo > hi {
                    continue;
                }
                let only_first = w_v >= w_u;
                for td in lo..=hi {
                    if self.req.constraints.edge_blocked(v, u, td) {
                        continue;
                    }
                    let step = self.req.avoidance.map_or(0, |a| a.step_conflicts(v, u, td));
                    self.push(Label {
                        v: u,
                        interval: iu,
                        stage: ns,
                        t: td + 1,
                        g: g + w_v * (td - t) as f64 + omega,
                        h: nh,
                        conflicts: c + self.wait_conflicts(v, t, td) + step,
                        parent: id,
                        open: true,
                    });
                    if only_first {
                        break;
                    }
                }
            }
        }
    }

    fn path(&self, id: usize, cost: f64) -> TimedPath {
        let mut chain = Vec::new();
        let mut cur = id;
        while cur != NONE {
            chain.push(cur);
            cur = self.labels[cur].parent;
        }
        chain.reverse();
        let first = &self.labels[chain[0]];
        let mut verts = vec![self.gg.vertex(first.v)];
        let mut prev = (first.v, first.t);
        for &lid in &chain[1..] {
            let l = &self.labels[lid];
            let (pv, pt) = prev;
            let waits = if l.v == pv { l.t - pt } else { l.t - pt - 1 };
            verts.extend(std::iter::repeat_n(self.gg.vertex(pv), waits));
            if l.v != pv {
                verts.push(self.gg.vertex(l.v));
            }
            prev = (l.v, l.t);
        }
        TimedPath::from_vertices(self.req.agent, self.req.start_time, verts, cost)
    }
}

/// Safe-interval path planning with the same contract as [`super::spacetime_astar`].
///
/// Vertex constraints become safe intervals; edge constraints are checked at
/// each departure time. Waiting costs differ per vertex, so a label is pruned
/// only if another in the same interval arrived no later and would reach it
/// by waiting at no greater cost.
pub fn sipp(gg: &GuidanceGraph, req: &LowLevelRequest) -> Result<LowLevelOutcome, SearchFailure> {
    let stages = Stages::new(gg, req)?;
    let start = gg.index(req.start);
    if !gg.is_passable(start) || req.constraints.vertex_blocked(start, req.start_time) {
        return Err(SearchFailure::StartBlocked);
    }
    let mut search = Search {
        gg,
        req,
        cap: time_cap(req),
        stages,
        intervals: HashMap::new(),
        labels: Vec::new(),
        frontier: HashMap::new(),
        queue: FocalQueue::new(),
    };
    let iv = search
        .intervals(start)
        .iter()
        .position(|i| i.contains(req.start_time))
        .expect("start time is safe");
    let s0 = search.stages.advance(0, start);
    let h0 = search.stages.h(s0, start);
    if !h0.is_finite() {
        return Err(SearchFailure::NoPath);
    }
    search.push(Label {
        v: start,
        interval: iv,
        stage: s0,
        t: req.start_time,
        g: 0.0,
        h: h0,
        conflicts: 0,
        parent: NONE,
        open: true,
    });

    let mut expanded = 0usize;
    loop {
        let labels = &search.labels;
        let Some((id, f_min)) = search.queue.pop(req.omega1, |i| labels[i].conflicts) else {
            return Err(SearchFailure::NoPath);
        };
        search.labels[id].open = false;
        let (v, iv, stage, t, g, h) = {
            let l = &search.labels[id];
            (l.v, l.interval, l.stage, l.t, l.g, l.h)
        };
        let terminal = if req.horizon.is_some_and(|hz| t >= hz) {
            Some(g + h)
        } else if search.stages.is_final(stage, v) && search.intervals(v)[iv].is_unbounded() {
            Some(g)
        } else {
            None
        };
        if let Some(cost) = terminal {
            return Ok(LowLevelOutcome {
                path: search.path(id, cost),
                lower_bound: f_min.min(cost),
                conflicts: search.labels[id].conflicts,
                expanded,
            });
        }
        expanded += 1;
        if req.expansion_limit.is_some_and(|n| expanded > n) {
            return Err(SearchFailure::Budget);
        }
        if expanded.is_multiple_of(1024) && req.deadline.is_some_and(|d| Instant::now() >= d) {
            return Err(SearchFailure::Budget);
        }
        search.expand(id);
    }
}
