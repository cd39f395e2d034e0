//! Uncontrollable-agent trajectory datasets and velocity observations.
//!
//! Trajectories are read from (and written to) a CSV file with the header
//! `traj_id,t,x,y`. Positions are meters in the map frame.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::angle::wrap_positive;
use crate::error::{Error, Result};
use crate::world::{GridMap, Vertex};

/// Default resampling period in seconds, one MAPF timestep.
pub const DEFAULT_DT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub samples: Vec<Sample>,
}

impl Trajectory {
    /// A trajectory needs two samples before velocities can be extracted.
    pub fn is_usable(&self) -> bool {
        self.samples.len() >= 2
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Linearly interpolated position at time `t`, clamped to the sample range.
    pub fn position_at(&self, t: f64) -> Option<(f64, f64)> {
        let first = self.samples.first()?;
        let last = self.samples.last()?;
        if t <= first.t {
            return Some((first.x, first.y));
        }
        if t >= last.t {
            return Some((last.x, last.y));
        }
        let i = self.samples.partition_point(|s| s.t <= t);
        let (a, b) = (self.samples[i - 1], self.samples[i]);
        let u = (t - a.t) / (b.t - a.t);
        Some((a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)))
    }
}

/// A direction/speed observation anchored at a metric position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityObservation {
    pub pos: (f64, f64),
    pub theta: f64,
    pub rho: f64,
}

#[derive(Debug, Deserialize)]
struct Row {
    traj_id: String,
    t: f64,
    x: f64,
    y: f64,
}

fn id_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// Reads a trajectory CSV. Rows are grouped by id and sorted by time; the
/// result is ordered by id (numerically when ids are integers).
pub fn load_trajectories<R: Read>(reader: R) -> Result<Vec<Trajectory>> {
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    for column in ["traj_id", "t", "x", "y"] {
        if !headers.iter().any(|h| h == column) {
            return Err(Error::parse(1, 1, format!("missing column `{column}`")));
        }
    }

    let mut grouped: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    for (i, row) in csv.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::parse(i + 2, 1, e.to_string()))?;
        if !(row.t.is_finite() && row.x.is_finite() && row.y.is_finite()) {
            return Err(Error::parse(i + 2, 1, "non-finite value"));
        }
        grouped.entry(row.traj_id).or_default().push(Sample {
            t: row.t,
            x: row.x,
            y: row.y,
        });
    }

    let mut out: Vec<Trajectory> = grouped
        .into_iter()
        .map(|(id, mut samples)| {
            samples.sort_by(|a, b| a.t.total_cmp(&b.t));
            if let Some(w) = samples.windows(2).find(|w| w[1].t <= w[0].t) {
                return Err(Error::Trajectory {
                    id,
                    message: format!("timestamps not strictly increasing at t={}", w[1].t),
                });
            }
            Ok(Trajectory { id, samples })
        })
        .collect::<Result<_>>()?;
    out.sort_by(|a, b| id_order(&a.id, &b.id));
    Ok(out)
}

/// Writes trajectories in the `traj_id,t,x,y` CSV format.
pub fn write_trajectories<W: Write>(writer: W, trajectories: &[Trajectory]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["traj_id", "t", "x", "y"])?;
    for traj in trajectories {
        for s in &traj.samples {
            csv.write_record([
                traj.id.clone(),
                s.t.to_string(),
                s.x.to_string(),
                s.y.to_string(),
            ])?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// Resamples `traj` every `dt` seconds and returns one observation per
/// resampled segment, anchored at the segment start.
pub fn extract_velocities(traj: &Trajectory, dt: f64) -> Result<Vec<VelocityObservation>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!(
            "resampling period must be positive, got {dt}"
        )));
    }
    if !traj.is_usable() {
        return Err(Error::Trajectory {
            id: traj.id.clone(),
            message: "fewer than two samples".into(),
        });
    }
    let t0 = traj.samples[0].t;
    let steps = (traj.duration() / dt + 1e-9).floor() as usize;
    let resampled: Vec<(f64, f64)> = (0..=steps)
        .map(|k| {
            traj.position_at(t0 + k as f64 * dt)
                .expect("non-empty trajectory")
        })
        .collect();

    Ok(resampled
        .windows(2)
        .map(|w| {
            let (dx, dy) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            let dist = dx.hypot(dy);
            // Up decreases y, so the mathematical angle flips the y axis.
            let theta = if dist > 0.0 {
                wrap_positive((-dy).atan2(dx))
            } else {
                0.0
            };
            VelocityObservation {
                pos: w[0],
                theta,
                rho: dist / dt,
            }
        })
        .collect())
}

/// Velocity observations of every usable trajectory, in dataset order.
pub fn dataset_velocities(dataset: &[Trajectory], dt: f64) -> Result<Vec<VelocityObservation>> {
    let per_traj: Vec<Vec<VelocityObservation>> = dataset
        .par_iter()
        .filter(|t| t.is_usable())
        .map(|t| extract_velocities(t, dt))
        .collect::<Result<_>>()?;
    Ok(per_traj.into_iter().flatten().collect())
}

/// Velocity samples binned per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellObservations {
    width: usize,
    height: usize,
    cells: Vec<Vec<(f64, f64)>>,
    dropped: usize,
}

impl CellObservations {
    pub fn empty(map: &GridMap) -> Self {
        CellObservations {
            width: map.width(),
            height: map.height(),
            cells: vec![Vec::new(); map.num_cells()],
            dropped: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Observation count of cell `v`.
    pub fn gamma(&self, v: Vertex) -> usize {
        self.observations(v).len()
    }

    pub fn observations(&self, v: Vertex) -> &[(f64, f64)] {
        if v.x >= self.width || v.y >= self.height {
            return &[];
        }
        &self.cells[v.y * self.width + v.x]
    }

    /// Observations that fell outside the map or on blocked cells.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn total(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }

    /// Non-empty cells in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (Vertex, &[(f64, f64)])> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_empty())
            .map(|(i, c)| (Vertex::new(i % self.width, i / self.width), c.as_slice()))
    }
}

/// Assigns each observation to the passable cell containing it.
pub fn bin_observations(observations: &[VelocityObservation], map: &GridMap) -> CellObservations {
    let mut binned = CellObservations::empty(map);
    for obs in observations {
        match map.world_to_vertex(obs.pos) {
            Ok(v) if map.is_passable(v) => binned.cells[map.index(v)].push((obs.theta, obs.rho)),
            _ => binned.dropped += 1,
        }
    }
    if binned.dropped > 0 {
        debug!(
            dropped = binned.dropped,
            "observations outside passable map area"
        );
    }
    binned
}
