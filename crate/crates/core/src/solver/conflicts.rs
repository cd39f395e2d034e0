use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::TimedPath;
use crate::world::Vertex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ConflictKind {
    /// Both agents occupy `v` at `timestep`.
    Vertex { v: Vertex },
    /// `a1` moves `from -> to` while `a2` moves `to -> from`, departing at `timestep`.
    Edge { from: Vertex, to: Vertex },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentConflict {
    pub a1: usize,
    pub a2: usize,
    pub kind: ConflictKind,
    pub timestep: usize,
}

/// All pairwise conflicts between `paths`, sorted by time and agent pair.
///
/// Agents rest at their last vertex after their path ends. With a horizon
/// only vertex conflicts at times `<= horizon` and moves arriving by then count.
pub fn detect_conflicts(paths: &[TimedPath], horizon: Option<usize>) -> Vec<AgentConflict> {
    let refs: Vec<&TimedPath> = paths.iter().collect();
    conflicts_among(&refs, horizon)
}

pub(crate) fn conflicts_among(paths: &[&TimedPath], horizon: Option<usize>) -> Vec<AgentConflict> {
    let mut out = Vec::new();
    if paths.len() < 2 {
        return out;
    }
    let t0 = paths.iter().map(|p| p.start_time).min().unwrap_or(0);
    let mut t_end = paths.iter().map(|p| p.end_time()).max().unwrap_or(0);
    if let Some(h) = horizon {
        t_end = t_end.min(h);
    }
    let mut at: HashMap<Vertex, Vec<usize>> = HashMap::with_capacity(paths.len());
    let mut moving: HashMap<(Vertex, Vertex), usize> = HashMap::with_capacity(paths.len());
    for t in t0..=t_end {
        at.clear();
        for (i, p) in paths.iter().enumerate() {
            at.entry(p.vertex_at(t)).or_default().push(i);
        }
        for (&v, agents) in &at {
            for (k, &i) in agents.iter().enumerate() {
                for &j in &agents[k + 1..] {
                    out.push(ordered(
                        paths[i].agent,
                        paths[j].agent,
                        ConflictKind::Vertex { v },
                        t,
                    ));
                }
            }
        }
        if t == t_end {
            break;
        }
        moving.clear();
        for (i, p) in paths.iter().enumerate() {
            let (a, b) = (p.vertex_at(t), p.vertex_at(t + 1));
            if a == b {
                continue;
            }
            if let Some(&j) = moving.get(&(b, a)) {
                let (ai, aj) = (paths[i].agent, paths[j].agent);
                let c = if ai < aj {
                    AgentConflict {
                        a1: ai,
                        a2: aj,
                        kind: ConflictKind::Edge { from: a, to: b },
                        timestep: t,
                    }
                } else {
                    AgentConflict {
                        a1: aj,
                        a2: ai,
                        kind: ConflictKind::Edge { from: b, to: a },
                        timestep: t,
                    }
                };
                out.push(c);
            }
            moving.insert((a, b), i);
        }
    }
    sort_conflicts(&mut out);
    out
}

pub(crate) fn sort_conflicts(cs: &mut [AgentConflict]) {
    cs.sort_by_key(|c| (c.timestep, c.a1, c.a2, kind_rank(&c.kind)));
}

fn ordered(a: usize, b: usize, kind: ConflictKind, timestep: usize) -> AgentConflict {
    AgentConflict {
        a1: a.min(b),
        a2: a.max(b),
        kind,
        timestep,
    }
}

fn kind_rank(k: &ConflictKind) -> (u8, usize, usize, usize, usize) {
    match *k {
        ConflictKind::Vertex { v } => (0, v.y, v.x, 0, 0),
        ConflictKind::Edge { from, to } => (1, from.y, from.x, to.y, to.x),
    }
}

/// Number of conflicts between two paths.
pub fn count_conflicts_between(a: &TimedPath, b: &TimedPath, horizon: Option<usize>) -> usize {
    conflicts_among(&[a, b], horizon).len()
}
