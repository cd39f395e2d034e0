//! Uncontrollable agents: synthetic trajectory datasets, execution streams,
//! and conflict counting against executed MAPF paths.
//!
//! UAs move on shortest 8-connected grid paths between cell centres at a
//! constant speed, ignore each other and vanish on arrival.

mod conflicts;

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use ordered_float::OrderedFloat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectories::{Sample, Trajectory};
use crate::world::{GridMap, Vertex};

pub use conflicts::{
    contact_episodes, count_conflicts, tracks_from_log, tracks_from_paths, AgentTrack,
    ConflictConfig, ConflictEvent, ConflictReport, Episode,
};

pub const DEFAULT_ONESHOT_COUNT: usize = 100;
pub const DEFAULT_DATASET_SIZE: usize = 10_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MovementType {
    /// Starts and goals uniform over the passable cells.
    #[default]
    Random,
    /// Starts and goals drawn from start and goal areas.
    Directed,
    /// As directed, with per-area speed multipliers.
    Speed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AreaRole {
    Start,
    Goal,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    /// Cardinal and diagonal moves; diagonals may not cut blocked corners.
    #[default]
    Eight,
    Four,
}

fn one() -> f64 {
    1.0
}

/// Axis-aligned rectangle of cells, corners inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub name: String,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub role: AreaRole,
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default = "one")]
    pub speed_multiplier: f64,
    /// Pairs start areas with the goal areas of the same stream; unset means any goal area.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<String>,
}

impl Area {
    fn cells(&self, map: &GridMap) -> Vec<Vertex> {
        let mut out = Vec::new();
        for y in self.y0..=self.y1 {
            for x in self.x0..=self.x1 {
                let v = Vertex::new(x, y);
                if map.is_passable(v) {
                    out.push(v);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UAConfig {
    pub movement_type: MovementType,
    pub areas: Vec<Area>,
    /// Metres per second.
    pub base_speed: f64,
    pub seed: u64,
    pub connectivity: Connectivity,
    pub oneshot_count: usize,
}

impl Default for UAConfig {
    fn default() -> Self {
        UAConfig {
            movement_type: MovementType::Random,
            areas: Vec::new(),
            base_speed: 1.0,
            seed: 0,
            connectivity: Connectivity::Eight,
            oneshot_count: DEFAULT_ONESHOT_COUNT,
        }
    }
}

impl UAConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self, map: &GridMap) -> Result<()> {
        if !(self.base_speed > 0.0 && self.base_speed.is_finite()) {
            return Err(Error::Config(format!(
                "base_speed must be positive, got {}",
                self.base_speed
            )));
        }
        for a in &self.areas {
            if a.x0 > a.x1 || a.y0 > a.y1 || a.x1 >= map.width() || a.y1 >= map.height() {
                return Err(Error::Config(format!(
                    "area {:?} is not a rectangle inside the map",
                    a.name
                )));
            }
            if !(a.weight > 0.0 && a.weight.is_finite()) {
                return Err(Error::Config(format!(
                    "area {:?}: weight must be positive",
                    a.name
                )));
            }
            if !(a.speed_multiplier > 0.0 && a.speed_multiplier.is_finite()) {
                return Err(Error::Config(format!(
                    "area {:?}: speed multiplier must be positive",
                    a.name
                )));
            }
            if a.cells(map).is_empty() {
                return Err(Error::Config(format!(
                    "area {:?} has no passable cell",
                    a.name
                )));
            }
        }
        if self.movement_type != MovementType::Random {
            let starts: Vec<&Area> = self
                .areas
                .iter()
                .filter(|a| a.role == AreaRole::Start)
                .collect();
            if starts.is_empty() || !self.areas.iter().any(|a| a.role == AreaRole::Goal) {
                return Err(Error::Config(
                    "directed movement needs start and goal areas".into(),
                ));
            }
            for s in starts {
                if self.goal_areas(s).next().is_none() {
                    return Err(Error::Config(format!(
                        "start area {:?} has no goal area in its stream",
                        s.name
                    )));
                }
            }
        }
        Ok(())
    }

    fn goal_areas<'a>(&'a self, start: &'a Area) -> impl Iterator<Item = &'a Area> + 'a {
        self.areas.iter().filter(move |g| {
            g.role == AreaRole::Goal && (start.stream.is_none() || g.stream == start.stream)
        })
    }
}

/// A UA's motion: waypoints at cell centres, times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UATrajectory {
    pub id: usize,
    pub spawn_time: usize,
    pub speed: f64,
    pub waypoints: Vec<Sample>,
}

impl UATrajectory {
    /// The same motion starting at `spawn_time` under a new id.
    pub fn spawned_at(mut self, id: usize, spawn_time: usize) -> Self {
        let shift = spawn_time as f64 - self.spawn_time as f64;
        for w in &mut self.waypoints {
            w.t += shift;
        }
        self.id = id;
        self.spawn_time = spawn_time;
        self
    }

    pub fn end_time(&self) -> f64 {
        self.waypoints.last().map_or(0.0, |w| w.t)
    }

    pub fn to_trajectory(&self) -> Trajectory {
        Trajectory {
            id: self.id.to_string(),
            samples: self.waypoints.clone(),
        }
    }
}

pub fn to_trajectories(uas: &[UATrajectory]) -> Vec<Trajectory> {
    uas.iter().map(UATrajectory::to_trajectory).collect()
}

/// Shortest grid path from `start` to `goal` as a constant-speed trajectory
/// spawned at time 0.
pub fn plan_ua_path(
    map: &GridMap,
    start: Vertex,
    goal: Vertex,
    speed: f64,
    connectivity: Connectivity,
) -> Result<UATrajectory> {
    for v in [start, goal] {
        if !map.in_bounds(v) {
            return Err(Error::OutOfBounds(v));
        }
        if !map.is_passable(v) {
            return Err(Error::Blocked(v));
        }
    }
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(Error::Config(format!(
            "speed must be positive, got {speed}"
        )));
    }
    let n = map.num_cells();
    let mut dist = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let (s, g) = (map.index(start), map.index(goal));
    let mut heap = BinaryHeap::new();
    dist[s] = 0.0;
    heap.push((Reverse(OrderedFloat(0.0)), Reverse(s)));
    while let Some((Reverse(OrderedFloat(d)), Reverse(u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        if u == g {
            break;
        }
        let uv = map.vertex(u);
        for (w, len) in moves(map, uv, connectivity) {
            let wi = map.index(w);
            let nd = d + len;
            if nd < dist[wi] {
                dist[wi] = nd;
                parent[wi] = u;
                heap.push((Reverse(OrderedFloat(nd)), Reverse(wi)));
            }
        }
    }
    if !dist[g].is_finite() {
        return Err(Error::Unreachable { start, goal });
    }
    let mut cells = vec![g];
    while *cells.last().expect("non-empty") != s {
        cells.push(parent[*cells.last().expect("non-empty")]);
    }
    cells.reverse();
    let mut waypoints = Vec::with_capacity(cells.len());
    let mut t = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for c in cells {
        let (x, y) = map.vertex_to_world(map.vertex(c));
        if let Some((px, py)) = prev {
            t += (x - px).hypot(y - py) / speed;
        }
        waypoints.push(Sample { t, x, y });
        prev = Some((x, y));
    }
    Ok(UATrajectory {
        id: 0,
        spawn_time: 0,
        speed,
        waypoints,
    })
}

fn moves(map: &GridMap, v: Vertex, connectivity: Connectivity) -> Vec<(Vertex, f64)> {
    const CARDINAL: [(isize, isize); 4] = [(1, 0), (0, -1), (-1, 0), (0, 1)];
    const DIAGONAL: [(isize, isize); 4] = [(1, -1), (-1, -1), (-1, 1), (1, 1)];
    let at = |dx: isize, dy: isize| -> Option<Vertex> {
        let x = v.x.checked_add_signed(dx)?;
        let y = v.y.checked_add_signed(dy)?;
        let w = Vertex::new(x, y);
        map.is_passable(w).then_some(w)
    };
    let mut out: Vec<(Vertex, f64)> = CARDINAL
        .iter()
        .filter_map(|&(dx, dy)| at(dx, dy).map(|w| (w, 1.0)))
        .collect();
    if connectivity == Connectivity::Eight {
        for &(dx, dy) in &DIAGONAL {
            if at(dx, 0).is_some() && at(0, dy).is_some() {
                if let Some(w) = at(dx, dy) {
                    out.push((w, std::f64::consts::SQRT_2));
                }
            }
        }
    }
    for o in &mut out {
        o.1 *= map.resolution();
    }
    out
}

/// Endpoint sampler shared by dataset and stream generation.
struct Sampler<'a> {
    map: &'a GridMap,
    cfg: &'a UAConfig,
    cells: Vec<Vertex>,
    area_cells: Vec<Vec<Vertex>>,
    component: Vec<usize>,
}

impl<'a> Sampler<'a> {
    fn new(map: &'a GridMap, cfg: &'a UAConfig) -> Result<Self> {
        cfg.validate(map)?;
        let cells: Vec<Vertex> = map.passable_vertices().collect();
        if cells.len() < 2 {
            return Err(Error::NoPassableCells);
        }
        let area_cells = cfg.areas.iter().map(|a| a.cells(map)).collect();
        let component = label_components(map, cfg.connectivity);
        Ok(Sampler {
            map,
            cfg,
            cells,
            area_cells,
            component,
        })
    }

    fn pick_area(&self, rng: &mut ChaCha8Rng, candidates: &[usize]) -> usize {
        let total: f64 = candidates.iter().map(|&i| self.cfg.areas[i].weight).sum();
        let mut r = rng.random::<f64>() * total;
        for &i in candidates {
            r -= self.cfg.areas[i].weight;
            if r < 0.0 {
                return i;
            }
        }
        *candidates.last().expect("non-empty")
    }

    /// Start, goal and speed of one UA.
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<(Vertex, Vertex, f64)> {
        for _ in 0..10_000 {
            let (start, goal, mult) = match self.cfg.movement_type {
                MovementType::Random => (
                    self.cells[rng.random_range(0..self.cells.len())],
                    self.cells[rng.random_range(0..self.cells.len())],
                    1.0,
                ),
                MovementType::Directed | MovementType::Speed => {
                    let starts: Vec<usize> = (0..self.cfg.areas.len())
                        .filter(|&i| self.cfg.areas[i].role == AreaRole::Start)
                        .collect();
                    let si = self.pick_area(rng, &starts);
                    let sa = &self.cfg.areas[si];
                    let goals: Vec<usize> = (0..self.cfg.areas.len())
                        .filter(|&i| {
                            let g = &self.cfg.areas[i];
                            g.role == AreaRole::Goal
                                && (sa.stream.is_none() || g.stream == sa.stream)
                        })
                        .collect();
                    let gi = self.pick_area(rng, &goals);
                    let sc = &self.area_cells[si];
                    let gc = &self.area_cells[gi];
                    let mult = if self.cfg.movement_type == MovementType::Speed {
                        sa.speed_multiplier
                    } else {
                        1.0
                    };
                    (
                        sc[rng.random_range(0..sc.len())],
                        gc[rng.random_range(0..gc.len())],
                        mult,
                    )
                }
            };
            if start != goal
                && self.component[self.map.index(start)] == self.component[self.map.index(goal)]
            {
                return Ok((start, goal, self.cfg.base_speed * mult));
            }
        }
        Err(Error::Config(
            "could not sample a reachable start/goal pair".into(),
        ))
    }
}

fn label_components(map: &GridMap, connectivity: Connectivity) -> Vec<usize> {
    let mut label = vec![usize::MAX; map.num_cells()];
    let mut next = 0;
    for v in map.passable_vertices() {
        if label[map.index(v)] != usize::MAX {
            continue;
        }
        label[map.index(v)] = next;
        let mut stack = vec![v];
        while let Some(u) = stack.pop() {
            for (w, _) in moves(map, u, connectivity) {
                if label[map.index(w)] == usize::MAX {
                    label[map.index(w)] = next;
                    stack.push(w);
                }
            }
        }
        next += 1;
    }
    label
}

fn plan_all(
    map: &GridMap,
    cfg: &UAConfig,
    endpoints: Vec<(usize, Vertex, Vertex, f64)>,
) -> Result<Vec<UATrajectory>> {
    endpoints
        .into_par_iter()
        .enumerate()
        .map(|(id, (spawn, s, g, speed))| {
            Ok(plan_ua_path(map, s, g, speed, cfg.connectivity)?.spawned_at(id, spawn))
        })
        .collect()
}

/// `n` trajectories for fitting a map of dynamics; all spawn at time 0.
pub fn generate_dataset(map: &GridMap, cfg: &UAConfig, n: usize) -> Result<Vec<UATrajectory>> {
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    let sampler = Sampler::new(map, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let endpoints = (0..n)
        .map(|_| sampler.sample(&mut rng).map(|(s, g, v)| (0, s, g, v)))
        .collect::<Result<Vec<_>>>()?;
    plan_all(map, cfg, endpoints)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamMode {
    /// `oneshot_count` UAs, all spawned at time 0.
    Oneshot,
    /// One UA spawned at every timestep.
    Lifelong,
}

/// UAs present during execution. Uses a random stream independent of the
/// dataset drawn from the same config.
pub fn generate_stream(
    map: &GridMap,
    cfg: &UAConfig,
    mode: StreamMode,
    sim_time: usize,
) -> Result<Vec<UATrajectory>> {
    let sampler = Sampler::new(map, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5354_5245_414d);
    let spawns: Vec<usize> = match mode {
        StreamMode::Oneshot => vec![0; cfg.oneshot_count],
        StreamMode::Lifelong => (0..sim_time).collect(),
    };
    let endpoints = spawns
        .into_iter()
        .map(|t| sampler.sample(&mut rng).map(|(s, g, v)| (t, s, g, v)))
        .collect::<Result<Vec<_>>>()?;
    plan_all(map, cfg, endpoints)
}
