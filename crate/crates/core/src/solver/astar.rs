use std::collections::HashMap;
use std::time::Instant;

use super::focal::{FocalQueue, EPS};
use super::request::{time_cap, Stages};
use super::{LowLevelOutcome, LowLevelRequest, SearchFailure, TimedPath};
use crate::guidance::GuidanceGraph;

const NONE: usize = usize::MAX;

struct Node {
    v: usize,
    t: usize,
    stage: usize,
    g: f64,
    h: f64,
    conflicts: u32,
    parent: usize,
    open: bool,
}

impl Node {
    fn f(&self) -> f64 {
        self.g + self.h
    }
}

/// Focal space-time A* over `(vertex, time, goal stage)`.
///
/// With `omega1 = 1` the returned path is cost-optimal under the constraints;
/// otherwise its cost is within `omega1` of the returned lower bound, and among
/// such paths ones with fewer conflicts against the avoidance table are preferred.
pub fn spacetime_astar(
    gg: &GuidanceGraph,
    req: &LowLevelRequest,
) -> Result<LowLevelOutcome, SearchFailure> {
    let stages = Stages::new(gg, req)?;
    let start = gg.index(req.start);
    if !gg.is_passable(start) || req.constraints.vertex_blocked(start, req.start_time) {
        return Err(SearchFailure::StartBlocked);
    }
    let cap = time_cap(req);
    let mut nodes: Vec<Node> = Vec::new();
    let mut index: HashMap<(usize, usize, usize), usize> = HashMap::new();
    let mut queue = FocalQueue::new();

    let s0 = stages.advance(0, start);
    let h0 = stages.h(s0, start);
    if !h0.is_finite() {
        return Err(SearchFailure::NoPath);
    }
    nodes.push(Node {
        v: start,
        t: req.start_time,
        stage: s0,
        g: 0.0,
        h: h0,
        conflicts: 0,
        parent: NONE,
        open: true,
    });
    index.insert((start, req.start_time.min(cap), s0), 0);
    queue.insert(h0, 0.0, 0, 0);

    let mut expanded = 0usize;
    loop {
        let Some((id, f_min)) = queue.pop(req.omega1, |i| nodes[i].conflicts) else {
            return Err(SearchFailure::NoPath);
        };
        nodes[id].open = false;

        let (v, t, stage, g) = (nodes[id].v, nodes[id].t, nodes[id].stage, nodes[id].g);
        let terminal = if req.horizon.is_some_and(|h| t >= h) {
            Some(g + nodes[id].h)
        } else if stages.is_final(stage, v) && !req.constraints.blocked_after(v, t) {
            Some(g)
        } else {
            None
        };
        if let Some(cost) = terminal {
            let mut verts = Vec::new();
            let mut cur = id;
            while cur != NONE {
                verts.push(gg.vertex(nodes[cur].v));
                cur = nodes[cur].parent;
            }
            verts.reverse();
            return Ok(LowLevelOutcome {
                path: TimedPath::from_vertices(req.agent, req.start_time, verts, cost),
                lower_bound: f_min.min(cost),
                conflicts: nodes[id].conflicts,
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

        let parent_conflicts = nodes[id].conflicts;
        for e in gg.edges(v) {
            let u = e.to;
            let nt = t + 1;
            if req.constraints.vertex_blocked(u, nt)
                || (u != v && req.constraints.edge_blocked(v, u, t))
            {
                continue;
            }
            let ns = stages.advance(stage, u);
            let nh = stages.h(ns, u);
            if !nh.is_finite() {
                continue;
            }
            let ng = g + e.omega;
            let nc = parent_conflicts + req.avoidance.map_or(0, |a| a.step_conflicts(v, u, t));
            let key = (u, nt.min(cap), ns);
            match index.get(&key) {
                None => {
                    let nid = nodes.len();
                    nodes.push(Node {
                        v: u,
                        t: nt,
                        stage: ns,
                        g: ng,
                        h: nh,
                        conflicts: nc,
                        parent: id,
                        open: true,
                    });
                    index.insert(key, nid);
                    queue.insert(ng + nh, ng, nc, nid);
                }
                Some(&nid) => {
                    let old = &nodes[nid];
                    let better = ng < old.g - EPS;
                    let same_fewer = (ng - old.g).abs() <= EPS && nc < old.conflicts && old.open;
                    if !(better || same_fewer) {
                        continue;
                    }
                    if old.open {
                        queue.remove(old.f(), old.g, old.conflicts, nid);
                    }
                    let n = &mut nodes[nid];
                    n.t = nt;
                    n.g = ng;
                    n.conflicts = nc;
                    n.parent = id;
                    n.open = true;
                    queue.insert(n.f(), n.g, n.conflicts, nid);
                }
            }
        }
    }
}
