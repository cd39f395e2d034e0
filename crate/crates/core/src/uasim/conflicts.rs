use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lifelong::SimulationLog;
use crate::solver::TimedPath;
use crate::trajectories::Trajectory;
use crate::world::{GridMap, Vertex};

/// A MAPF agent's executed motion: `cells[k]` is reached at `start_time + k`
/// and the agent moves in a straight line at constant speed in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent: usize,
    pub start_time: usize,
    pub cells: Vec<Vertex>,
}

impl AgentTrack {
    pub fn end_time(&self) -> usize {
        self.start_time + self.cells.len() - 1
    }

    fn position(&self, map: &GridMap, t: f64) -> (f64, f64) {
        let rel = (t - self.start_time as f64).clamp(0.0, (self.cells.len() - 1) as f64);
        let k = (rel.floor() as usize).min(self.cells.len() - 1);
        let a = map.vertex_to_world(self.cells[k]);
        if k + 1 == self.cells.len() {
            return a;
        }
        let b = map.vertex_to_world(self.cells[k + 1]);
        let u = rel - k as f64;
        (a.0 + u * (b.0 - a.0), a.1 + u * (b.1 - a.1))
    }
}

/// Tracks of one-shot paths, each resting at its last vertex until `until`.
pub fn tracks_from_paths(paths: &[TimedPath], until: usize) -> Vec<AgentTrack> {
    paths
        .iter()
        .map(|p| {
            let end = until.max(p.end_time());
            AgentTrack {
                agent: p.agent,
                start_time: p.start_time,
                cells: (p.start_time..=end).map(|t| p.vertex_at(t)).collect(),
            }
        })
        .collect()
}

pub fn tracks_from_log(log: &SimulationLog) -> Vec<AgentTrack> {
    let start = log.steps.first().map_or(0, |s| s.t);
    (0..log.num_agents)
        .map(|i| AgentTrack {
            agent: i,
            start_time: start,
            cells: log.steps.iter().map(|s| s.positions[i]).collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConflictConfig {
    pub radius_agent: f64,
    pub radius_ua: f64,
}

impl Default for ConflictConfig {
    fn default() -> Self {
        ConflictConfig {
            radius_agent: 0.3,
            radius_ua: 0.3,
        }
    }
}

impl ConflictConfig {
    pub fn threshold(&self) -> f64 {
        self.radius_agent + self.radius_ua
    }
}

/// A maximal time interval during which two bodies are closer than the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub start: f64,
    pub end: f64,
    pub min_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictEvent {
    pub agent: usize,
    /// Index of the UA in the evaluated list.
    pub ua: usize,
    pub time: f64,
    pub end: f64,
    pub min_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictReport {
    /// Number of contact episodes.
    pub total: usize,
    /// Episodes by the timestep in which they start.
    pub per_timestep: Vec<usize>,
    /// Agent/UA pairs in contact at some point of each timestep.
    pub overlaps_per_timestep: Vec<usize>,
    pub events: Vec<ConflictEvent>,
}

/// Contact episodes between an agent and a UA, computed piecewise in closed form.
///
/// Between consecutive breakpoints of either motion both move at constant
/// velocity, so their squared distance is a convex quadratic in time and the
/// contact set within a piece is a single interval.
pub fn contact_episodes(
    map: &GridMap,
    agent: &AgentTrack,
    ua: &Trajectory,
    threshold: f64,
) -> Vec<Episode> {
    let mut episodes: Vec<Episode> = Vec::new();
    let (Some(first), Some(last)) = (ua.samples.first(), ua.samples.last()) else {
        return episodes;
    };
    let lo = first.t.max(agent.start_time as f64);
    let hi = last.t.min(agent.end_time() as f64);
    if !(lo < hi) {
        return episodes;
    }
    let mut cuts: Vec<f64> = vec![lo, hi];
    cuts.extend((lo.ceil() as usize..=hi.floor() as usize).map(|k| k as f64));
    cuts.extend(ua.samples.iter().map(|s| s.t));
    cuts.retain(|&t| t >= lo && t <= hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let r2 = threshold * threshold;
    let rel = |t: f64| {
        let a = agent.position(map, t);
        let u = ua.position_at(t).expect("non-empty trajectory");
        (a.0 - u.0, a.1 - u.1)
    };
    for w in cuts.windows(2) {
        let (ta, tb) = (w[0], w[1]);
        let len = tb - ta;
        let p0 = rel(ta);
        let p1 = rel(tb);
        let v = ((p1.0 - p0.0) / len, (p1.1 - p0.1) / len);
        let a = v.0 * v.0 + v.1 * v.1;
        let b = 2.0 * (p0.0 * v.0 + p0.1 * v.1);
        let c = p0.0 * p0.0 + p0.1 * p0.1 - r2;
        let (s, e) = if a < 1e-15 {
            if c < 0.0 {
                (0.0, len)
            } else {
                continue;
            }
        } else {
            let disc = b * b - 4.0 * a * c;
            if disc <= 0.0 {
                continue;
            }
            let sq = disc.sqrt();
            let r1 = (-b - sq) / (2.0 * a);
            let r2 = (-b + sq) / (2.0 * a);
            let (s, e) = (r1.max(0.0), r2.min(len));
            if !(s < e) {
                continue;
            }
            (s, e)
        };
        let tau = if a < 1e-15 {
            s
        } else {
            (-b / (2.0 * a)).clamp(s, e)
        };
        let d = ((p0.0 + v.0 * tau).powi(2) + (p0.1 + v.1 * tau).powi(2)).sqrt();
        let (start, end) = (ta + s, ta + e);
        match episodes.last_mut() {
            Some(prev) if start <= prev.end + 1e-9 => {
                prev.end = end;
                prev.min_distance = prev.min_distance.min(d);
            }
            _ => episodes.push(Episode {
                start,
                end,
                min_distance: d,
            }),
        }
    }
    episodes
}

/// Counts contact episodes between every agent and every UA.
pub fn count_conflicts(
    map: &GridMap,
    agents: &[AgentTrack],
    uas: &[Trajectory],
    cfg: &ConflictConfig,
) -> ConflictReport {
    let threshold = cfg.threshold();
    let len = agents.iter().map(|a| a.end_time() + 1).max().unwrap_or(0);
    let per_agent: Vec<Vec<ConflictEvent>> = agents
        .par_iter()
        .map(|a| {
            let mut out = Vec::new();
            for (j, ua) in uas.iter().enumerate() {
                for e in contact_episodes(map, a, ua, threshold) {
                    out.push(ConflictEvent {
                        agent: a.agent,
                        ua: j,
                        time: e.start,
                        end: e.end,
                        min_distance: e.min_distance,
                    });
                }
            }
            out
        })
        .collect();
    let mut events: Vec<ConflictEvent> = per_agent.into_iter().flatten().collect();
    events.sort_by(|x, y| {
        x.time
            .total_cmp(&y.time)
            .then(x.agent.cmp(&y.agent))
            .then(x.ua.cmp(&y.ua))
    });

    let mut per_timestep = vec![0; len];
    let mut overlaps_per_timestep = vec![0; len];
    let mut last_counted: std::collections::HashMap<(usize, usize), usize> =
        std::collections::HashMap::new();
    for e in &events {
        let k0 = e.time.floor() as usize;
        per_timestep[k0.min(len - 1)] += 1;
        let k1 = ((e.end.ceil() as usize).saturating_sub(1)).max(k0);
        for k in k0..=k1.min(len - 1) {
            let slot = last_counted.entry((e.agent, e.ua)).or_insert(usize::MAX);
            if *slot == usize::MAX || *slot < k {
                overlaps_per_timestep[k] += 1;
                *slot = k;
            }
        }
    }
    ConflictReport {
        total: events.len(),
        per_timestep,
        overlaps_per_timestep,
        events,
    }
}
