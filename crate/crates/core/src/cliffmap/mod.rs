//! Semi-wrapped Gaussian mixtures over velocity and the per-cell motion map
//! (CLiFF-map) built from them.
//!
//! A velocity is `u = (theta, rho)`: direction in `[0, 2π)` and speed in m/s.
//! The direction is wrapped around the circle by summing the bivariate normal
//! over `2K + 1` shifted copies, `K` being the winding truncation.

mod fit;
mod io;

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::angle::{wrap_positive, wrap_signed};
use crate::error::{Error, Result};
use crate::world::{GridMap, Vertex};

pub use fit::{build_cliffmap, fit_cliffmap, fit_swgmm, fit_swgmm_with_trace, EmTrace, FitConfig};
pub use io::{load_cliffmap, save_cliffmap, CLIFFMAP_SCHEMA_VERSION};

/// Default winding truncation `K` (five wrapped copies).
pub const DEFAULT_WINDINGS: i32 = 2;

/// A symmetric 2x2 covariance `[[s11, s12], [s12, s22]]` over (theta, rho).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cov2 {
    pub s11: f64,
    pub s12: f64,
    pub s22: f64,
}

impl Cov2 {
    pub const fn new(s11: f64, s12: f64, s22: f64) -> Self {
        Cov2 { s11, s12, s22 }
    }

    pub const fn diag(s11: f64, s22: f64) -> Self {
        Cov2 { s11, s12: 0.0, s22 }
    }

    pub const fn isotropic(s: f64) -> Self {
        Cov2::diag(s, s)
    }

    pub fn det(&self) -> f64 {
        self.s11 * self.s22 - self.s12 * self.s12
    }

    pub fn is_positive_definite(&self) -> bool {
        self.s11.is_finite()
            && self.s12.is_finite()
            && self.s22.is_finite()
            && self.s11 > 0.0
            && self.s22 > 0.0
            && self.det() > 0.0
    }

    /// Quadratic form `dᵀ Σ⁻¹ d`.
    pub fn mahalanobis_sq(&self, d: (f64, f64)) -> f64 {
        let (a, b) = d;
        (self.s22 * a * a - 2.0 * self.s12 * a * b + self.s11 * b * b) / self.det()
    }

    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.s11 + self.s22);
        let r = (0.25 * (self.s11 - self.s22).powi(2) + self.s12 * self.s12).sqrt();
        (mean - r, mean + r)
    }
}

/// Semi-wrapped normal distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Swnd {
    mu_theta: f64,
    mu_rho: f64,
    sigma: Cov2,
}

impl Swnd {
    pub fn new(mu_theta: f64, mu_rho: f64, sigma: Cov2) -> Result<Self> {
        if !sigma.is_positive_definite() {
            return Err(Error::SingularCovariance);
        }
        if !(mu_theta.is_finite() && mu_rho.is_finite()) {
            return Err(Error::InvalidModel("non-finite mean".into()));
        }
        Ok(Swnd {
            mu_theta: wrap_positive(mu_theta),
            mu_rho,
            sigma,
        })
    }

    pub fn mu_theta(&self) -> f64 {
        self.mu_theta
    }

    pub fn mu_rho(&self) -> f64 {
        self.mu_rho
    }

    pub fn sigma(&self) -> &Cov2 {
        &self.sigma
    }

    fn log_norm(&self) -> f64 {
        -(TAU.ln()) - 0.5 * self.sigma.det().ln()
    }

    /// Log-density of each wrapped copy `m = -K..=K` at `u`.
    pub(crate) fn log_terms(&self, u: (f64, f64), windings: i32) -> impl Iterator<Item = f64> + '_ {
        let d_theta = wrap_signed(u.0 - self.mu_theta);
        let d_rho = u.1 - self.mu_rho;
        let norm = self.log_norm();
        (-windings..=windings).map(move |m| {
            let d = (d_theta + TAU * m as f64, d_rho);
            norm - 0.5 * self.sigma.mahalanobis_sq(d)
        })
    }

    /// Density at `u` with the default winding truncation.
    pub fn density(&self, u: (f64, f64)) -> f64 {
        self.density_with_windings(u, DEFAULT_WINDINGS)
    }

    pub fn density_with_windings(&self, u: (f64, f64), windings: i32) -> f64 {
        self.log_terms(u, windings).map(f64::exp).sum()
    }

    pub fn log_density(&self, u: (f64, f64), windings: i32) -> f64 {
        log_sum_exp(self.log_terms(u, windings))
    }
}

/// Semi-wrapped Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Swgmm {
    components: Vec<(f64, Swnd)>,
}

impl Swgmm {
    pub fn new(components: Vec<(f64, Swnd)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidModel(
                "mixture needs at least one component".into(),
            ));
        }
        if let Some((beta, _)) = components.iter().find(|(b, _)| !(0.0..=1.0).contains(b)) {
            return Err(Error::InvalidModel(format!(
                "mixture weight {beta} outside [0, 1]"
            )));
        }
        let total: f64 = components.iter().map(|(b, _)| b).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidModel(format!(
                "mixture weights sum to {total}"
            )));
        }
        Ok(Swgmm { components })
    }

    pub fn single(dist: Swnd) -> Self {
        Swgmm {
            components: vec![(1.0, dist)],
        }
    }

    pub fn components(&self) -> &[(f64, Swnd)] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn density(&self, u: (f64, f64)) -> f64 {
        self.density_with_windings(u, DEFAULT_WINDINGS)
    }

    pub fn density_with_windings(&self, u: (f64, f64), windings: i32) -> f64 {
        self.components
            .iter()
            .map(|(beta, d)| beta * d.density_with_windings(u, windings))
            .sum()
    }

    pub fn log_density(&self, u: (f64, f64), windings: i32) -> f64 {
        log_sum_exp(
            self.components
                .iter()
                .flat_map(|(beta, d)| d.log_terms(u, windings).map(move |l| l + beta.ln())),
        )
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Motion model of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellModel {
    pub gamma: usize,
    pub model: Option<Swgmm>,
}

/// Per-cell motion map: observation counts plus fitted mixtures.
#[derive(Debug, Clone, PartialEq)]
pub struct CliffMap {
    map_name: String,
    width: usize,
    height: usize,
    cells: Vec<CellModel>,
    fit_config: FitConfig,
    dataset_hash: String,
}

impl CliffMap {
    /// A map without observations; it leaves every edge at the step cost.
    pub fn empty(map: &GridMap) -> Self {
        CliffMap::from_parts(
            map.name(),
            map.width(),
            map.height(),
            FitConfig::default(),
            String::new(),
        )
    }

    pub(crate) fn from_parts(
        map_name: &str,
        width: usize,
        height: usize,
        fit_config: FitConfig,
        dataset_hash: String,
    ) -> Self {
        CliffMap {
            map_name: map_name.to_string(),
            width,
            height,
            cells: vec![
                CellModel {
                    gamma: 0,
                    model: None
                };
                width * height
            ],
            fit_config,
            dataset_hash,
        }
    }

    pub fn map_name(&self) -> &str {
        &self.map_name
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn fit_config(&self) -> &FitConfig {
        &self.fit_config
    }

    pub fn dataset_hash(&self) -> &str {
        &self.dataset_hash
    }

    pub fn set_dataset_hash(&mut self, hash: impl Into<String>) {
        self.dataset_hash = hash.into();
    }

    fn slot(&self, v: Vertex) -> Option<usize> {
        (v.x < self.width && v.y < self.height).then(|| v.y * self.width + v.x)
    }

    pub fn gamma(&self, v: Vertex) -> usize {
        self.slot(v).map_or(0, |i| self.cells[i].gamma)
    }

    pub fn model(&self, v: Vertex) -> Option<&Swgmm> {
        self.slot(v).and_then(|i| self.cells[i].model.as_ref())
    }

    /// Sets the observation count and model of `v`.
    pub fn set_cell(&mut self, v: Vertex, gamma: usize, model: Option<Swgmm>) -> Result<()> {
        let i = self.slot(v).ok_or(Error::OutOfBounds(v))?;
        if model.is_some() && gamma == 0 {
            return Err(Error::InvalidModel(format!(
                "cell {v} has a model but no observations"
            )));
        }
        self.cells[i] = CellModel { gamma, model };
        Ok(())
    }

    /// Cells with at least one observation, row-major.
    pub fn cells(&self) -> impl Iterator<Item = (Vertex, &CellModel)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.gamma > 0 || c.model.is_some())
            .map(|(i, c)| (Vertex::new(i % self.width, i / self.width), c))
    }

    pub fn modeled_count(&self) -> usize {
        self.cells.iter().filter(|c| c.model.is_some()).count()
    }

    /// Fraction of the map's passable cells that carry a model.
    pub fn coverage(&self, map: &GridMap) -> f64 {
        let passable = map.passable_count();
        let modeled = map
            .passable_vertices()
            .filter(|&v| self.model(v).is_some())
            .count();
        modeled as f64 / passable as f64
    }

    /// True when the map matches the grid dimensions of `map`.
    pub fn fits(&self, map: &GridMap) -> bool {
        self.width == map.width() && self.height == map.height()
    }
}

/// Hex-encoded SHA-256 of `bytes`, used to tag maps with their dataset.
pub fn dataset_hash(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Midpoint quadrature of `density` over `θ ∈ [0, 2π)`, `ρ ∈ [0, rho_max]`.
pub fn integrate_density(
    density: impl Fn((f64, f64)) -> f64,
    n_theta: usize,
    n_rho: usize,
    rho_max: f64,
) -> f64 {
    let d_theta = TAU / n_theta as f64;
    let d_rho = rho_max / n_rho as f64;
    let mut total = 0.0;
    for i in 0..n_theta {
        let theta = (i as f64 + 0.5) * d_theta;
        for k in 0..n_rho {
            total += density((theta, (k as f64 + 0.5) * d_rho));
        }
    }
    total * d_theta * d_rho
}
