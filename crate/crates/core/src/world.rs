//! Grid worlds, benchmark map/scenario files and the world-to-vertex transform.
//!
//! Coordinates follow the benchmark file layout: `x` is the column, `y` the
//! row, the origin is the top-left corner and [`Action::Up`] decreases `y`.
//! One cell is one square meter.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of a grid cell in meters.
pub const RESOLUTION: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Vertex {
    pub x: usize,
    pub y: usize,
}

impl Vertex {
    pub const fn new(x: usize, y: usize) -> Self {
        Vertex { x, y }
    }

    pub fn manhattan(self, other: Vertex) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// The five actions of a 4-connected grid agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Right,
    Up,
    Left,
    Down,
    Wait,
}

impl Action {
    /// All actions in the canonical expansion order.
    pub const ALL: [Action; 5] = [
        Action::Right,
        Action::Up,
        Action::Left,
        Action::Down,
        Action::Wait,
    ];
    pub const MOVES: [Action; 4] = [Action::Right, Action::Up, Action::Left, Action::Down];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::Right => (1, 0),
            Action::Up => (0, -1),
            Action::Left => (-1, 0),
            Action::Down => (0, 1),
            Action::Wait => (0, 0),
        }
    }

    pub fn is_move(self) -> bool {
        self != Action::Wait
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Right => "right",
            Action::Up => "up",
            Action::Left => "left",
            Action::Down => "down",
            Action::Wait => "wait",
        }
    }

    /// The action leading from `from` to the adjacent (or identical) vertex `to`.
    pub fn between(from: Vertex, to: Vertex) -> Option<Action> {
        let dx = to.x as isize - from.x as isize;
        let dy = to.y as isize - from.y as isize;
        Action::ALL.into_iter().find(|a| a.delta() == (dx, dy))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A rectangular occupancy grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridMap {
    name: String,
    width: usize,
    height: usize,
    passable: Vec<bool>,
}

impl GridMap {
    pub fn new(
        name: impl Into<String>,
        width: usize,
        height: usize,
        passable: Vec<bool>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!(
                "map dimensions must be positive, got {width}x{height}"
            )));
        }
        if passable.len() != width * height {
            return Err(Error::Config(format!(
                "passability table has {} entries, expected {}",
                passable.len(),
                width * height
            )));
        }
        if !passable.iter().any(|&p| p) {
            return Err(Error::NoPassableCells);
        }
        Ok(GridMap {
            name: name.into(),
            width,
            height,
            passable,
        })
    }

    /// Builds a map from rows of `.` (free) and `@` (blocked) characters.
    pub fn from_rows(rows: &[&str]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut passable = Vec::with_capacity(width * height);
        for (y, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::parse(y + 1, 1, "ragged row"));
            }
            for (x, c) in row.chars().enumerate() {
                passable.push(cell_passable(c).ok_or_else(|| {
                    Error::parse(y + 1, x + 1, format!("unknown cell character {c:?}"))
                })?);
            }
        }
        GridMap::new("inline", width, height, passable)
    }

    /// An obstacle-free map.
    pub fn open(width: usize, height: usize) -> Self {
        GridMap::new(
            format!("empty-{width}-{height}"),
            width,
            height,
            vec![true; width * height],
        )
        .expect("non-empty open map")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn resolution(&self) -> f64 {
        RESOLUTION
    }

    pub fn in_bounds(&self, v: Vertex) -> bool {
        v.x < self.width && v.y < self.height
    }

    pub fn is_passable(&self, v: Vertex) -> bool {
        self.in_bounds(v) && self.passable[self.index(v)]
    }

    pub fn index(&self, v: Vertex) -> usize {
        v.y * self.width + v.x
    }

    pub fn vertex(&self, index: usize) -> Vertex {
        Vertex::new(index % self.width, index / self.width)
    }

    pub fn passable_count(&self) -> usize {
        self.passable.iter().filter(|&&p| p).count()
    }

    /// Passable vertices in row-major order.
    pub fn passable_vertices(&self) -> impl Iterator<Item = Vertex> + '_ {
        (0..self.num_cells())
            .filter(|&i| self.passable[i])
            .map(|i| self.vertex(i))
    }

    /// Applies `action` at `v`, returning the target if it is in bounds and passable.
    pub fn step(&self, v: Vertex, action: Action) -> Option<Vertex> {
        let (dx, dy) = action.delta();
        let x = v.x.checked_add_signed(dx)?;
        let y = v.y.checked_add_signed(dy)?;
        let to = Vertex::new(x, y);
        self.is_passable(to).then_some(to)
    }

    /// Transitions available at `v` in the order Right, Up, Left, Down, Wait.
    pub fn neighbors(&self, v: Vertex) -> Result<Vec<(Action, Vertex)>> {
        if !self.in_bounds(v) {
            return Err(Error::OutOfBounds(v));
        }
        if !self.is_passable(v) {
            return Err(Error::Blocked(v));
        }
        Ok(Action::ALL
            .into_iter()
            .filter_map(|a| self.step(v, a).map(|to| (a, to)))
            .collect())
    }

    /// Maps a metric position to the cell containing it.
    pub fn world_to_vertex(&self, pos: (f64, f64)) -> Result<Vertex> {
        let (x, y) = pos;
        let extent_x = self.width as f64 * RESOLUTION;
        let extent_y = self.height as f64 * RESOLUTION;
        if !(x >= 0.0 && y >= 0.0 && x < extent_x && y < extent_y) {
            return Err(Error::OutOfExtent { x, y });
        }
        let cx = ((x / RESOLUTION).floor() as usize).min(self.width - 1);
        let cy = ((y / RESOLUTION).floor() as usize).min(self.height - 1);
        Ok(Vertex::new(cx, cy))
    }

    /// Center of the cell `v` in meters.
    pub fn vertex_to_world(&self, v: Vertex) -> (f64, f64) {
        (
            (v.x as f64 + 0.5) * RESOLUTION,
            (v.y as f64 + 0.5) * RESOLUTION,
        )
    }

    /// Renders the map in the octile benchmark format.
    pub fn to_map_string(&self) -> String {
        let mut out = format!(
            "type octile\nheight {}\nwidth {}\nmap\n",
            self.height, self.width
        );
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(if self.passable[y * self.width + x] {
                    '.'
                } else {
                    '@'
                });
            }
            out.push('\n');
        }
        out
    }
}

fn cell_passable(c: char) -> Option<bool> {
    match c {
        '.' | 'G' => Some(true),
        '@' | 'O' | 'T' | 'W' | 'S' => Some(false),
        _ => None,
    }
}

fn header_value(line: Option<(usize, &str)>, key: &str, line_no: usize) -> Result<usize> {
    let (_, text) =
        line.ok_or_else(|| Error::parse(line_no, 1, format!("missing `{key}` header")))?;
    let mut parts = text.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(k), Some(v), None) if k == key => v
            .parse()
            .map_err(|_| Error::parse(line_no, k.len() + 2, format!("invalid {key} value {v:?}"))),
        _ => Err(Error::parse(
            line_no,
            1,
            format!("expected `{key} <n>`, found {text:?}"),
        )),
    }
}

/// Parses a map in the octile benchmark format.
pub fn parse_map(text: &str) -> Result<GridMap> {
    let mut lines = text.lines().map(|l| l.trim_end_matches('\r')).enumerate();

    match lines.next() {
        Some((_, l)) if l.split_whitespace().eq(["type", "octile"]) => {}
        Some((_, l)) => {
            return Err(Error::parse(
                1,
                1,
                format!("expected `type octile`, found {l:?}"),
            ))
        }
        None => return Err(Error::parse(1, 1, "empty map file")),
    }
    let height = header_value(lines.next(), "height", 2)?;
    let width = header_value(lines.next(), "width", 3)?;
    match lines.next() {
        Some((_, l)) if l.trim() == "map" => {}
        _ => return Err(Error::parse(4, 1, "expected `map`")),
    }
    if width == 0 || height == 0 {
        return Err(Error::parse(2, 1, "map dimensions must be positive"));
    }

    let mut passable = Vec::with_capacity(width * height);
    let mut rows = 0;
    for (idx, line) in lines {
        let line_no = idx + 1;
        if rows == height {
            if line.trim().is_empty() {
                continue;
            }
            return Err(Error::parse(
                line_no,
                1,
                format!("more than {height} map rows"),
            ));
        }
        let count = line.chars().count();
        if count != width {
            return Err(Error::parse(
                line_no,
                count.min(width) + 1,
                format!("row has {count} cells, expected {width}"),
            ));
        }
        for (col, c) in line.chars().enumerate() {
            let p = cell_passable(c).ok_or_else(|| {
                Error::parse(line_no, col + 1, format!("unknown cell character {c:?}"))
            })?;
            passable.push(p);
        }
        rows += 1;
    }
    if rows != height {
        return Err(Error::parse(
            5 + rows,
            1,
            format!("found {rows} map rows, expected {height}"),
        ));
    }
    GridMap::new("", width, height, passable)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentTask {
    pub start: Vertex,
    pub goal: Vertex,
}

/// A one-shot MAPF instance: ordered start/goal pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub agents: Vec<AgentTask>,
}

impl Scenario {
    /// Validates start/goal distinctness and passability against `map`.
    pub fn new(map: &GridMap, agents: Vec<AgentTask>) -> Result<Self> {
        let mut starts = std::collections::HashSet::new();
        let mut goals = std::collections::HashSet::new();
        for (i, a) in agents.iter().enumerate() {
            for (what, v) in [("start", a.start), ("goal", a.goal)] {
                if !map.in_bounds(v) {
                    return Err(Error::InvalidScenario(format!(
                        "agent {i}: {what} {v} out of bounds"
                    )));
                }
                if !map.is_passable(v) {
                    return Err(Error::InvalidScenario(format!(
                        "agent {i}: {what} {v} is blocked"
                    )));
                }
            }
            if !starts.insert(a.start) {
                return Err(Error::InvalidScenario(format!(
                    "agent {i}: duplicate start {}",
                    a.start
                )));
            }
            if !goals.insert(a.goal) {
                return Err(Error::InvalidScenario(format!(
                    "agent {i}: duplicate goal {}",
                    a.goal
                )));
            }
        }
        Ok(Scenario { agents })
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }
}

/// Connected-component label of every passable cell.
pub fn components(map: &GridMap) -> Vec<Option<usize>> {
    let mut label = vec![None; map.num_cells()];
    let mut next = 0;
    for v in map.passable_vertices() {
        if label[map.index(v)].is_some() {
            continue;
        }
        let mut queue = VecDeque::from([v]);
        label[map.index(v)] = Some(next);
        while let Some(u) = queue.pop_front() {
            for (_, w) in map.neighbors(u).expect("passable vertex") {
                if label[map.index(w)].is_none() {
                    label[map.index(w)] = Some(next);
                    queue.push_back(w);
                }
            }
        }
        next += 1;
    }
    label
}

/// A seeded random instance: distinct starts, distinct goals, every goal
/// reachable from its start and different from it.
pub fn random_scenario(map: &GridMap, agents: usize, seed: u64) -> Result<Scenario> {
    let comp = components(map);
    let mut sizes = std::collections::HashMap::new();
    for v in map.passable_vertices() {
        *sizes.entry(comp[map.index(v)]).or_insert(0usize) += 1;
    }
    let mut cells: Vec<Vertex> = map
        .passable_vertices()
        .filter(|v| sizes[&comp[map.index(*v)]] > 1)
        .collect();
    if cells.len() < agents {
        return Err(Error::NotEnoughAgents {
            requested: agents,
            available: cells.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cells.shuffle(&mut rng);
    let starts = &cells[..agents];
    let mut pool = cells.clone();
    pool.shuffle(&mut rng);
    let mut used = vec![false; pool.len()];
    let mut tasks = Vec::with_capacity(agents);
    for &s in starts {
        let c = comp[map.index(s)];
        let k = (0..pool.len())
            .find(|&k| !used[k] && pool[k] != s && comp[map.index(pool[k])] == c)
            .ok_or_else(|| {
                Error::InvalidScenario(format!("no free goal left for the agent starting at {s}"))
            })?;
        used[k] = true;
        tasks.push(AgentTask {
            start: s,
            goal: pool[k],
        });
    }
    Scenario::new(map, tasks)
}

/// Parses the first `n` entries of a version-1 scenario file.
pub fn parse_scen(text: &str, n: usize, map: &GridMap) -> Result<Scenario> {
    let mut lines = text.lines().map(|l| l.trim_end_matches('\r')).enumerate();
    match lines.next() {
        Some((_, l)) if l.split_whitespace().eq(["version", "1"]) => {}
        Some((_, l)) if l.split_whitespace().eq(["version", "1.0"]) => {}
        _ => return Err(Error::parse(1, 1, "missing `version 1` header")),
    }

    let mut entries = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 8 {
            return Err(Error::parse(
                line_no,
                1,
                format!("expected 9 tab-separated fields, found {}", fields.len()),
            ));
        }
        let coord = |i: usize| -> Result<usize> {
            fields[i].trim().parse().map_err(|_| {
                Error::parse(
                    line_no,
                    i + 1,
                    format!("invalid coordinate {:?}", fields[i]),
                )
            })
        };
        entries.push((
            line_no,
            AgentTask {
                start: Vertex::new(coord(4)?, coord(5)?),
                goal: Vertex::new(coord(6)?, coord(7)?),
            },
        ));
    }
    if n > entries.len() {
        return Err(Error::NotEnoughAgents {
            requested: n,
            available: entries.len(),
        });
    }
    for (line_no, task) in &entries[..n] {
        for v in [task.start, task.goal] {
            if !map.in_bounds(v) {
                return Err(Error::parse(
                    *line_no,
                    5,
                    format!("coordinate {v} outside the map"),
                ));
            }
            if !map.is_passable(v) {
                return Err(Error::parse(
                    *line_no,
                    5,
                    format!("coordinate {v} is a blocked cell"),
                ));
            }
        }
    }
    Scenario::new(map, entries.into_iter().take(n).map(|(_, t)| t).collect())
}

/// Renders a scenario as a version-1 scen file.
pub fn scenario_to_string(map: &GridMap, scenario: &Scenario) -> String {
    let mut out = String::from("version 1\n");
    for a in &scenario.agents {
        out.push_str(&format!(
            "0\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            map.name(),
            map.width(),
            map.height(),
            a.start.x,
            a.start.y,
            a.goal.x,
            a.goal.y,
            a.start.manhattan(a.goal)
        ));
    }
    out
}
