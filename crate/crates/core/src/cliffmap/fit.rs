//! Expectation-maximisation for semi-wrapped mixtures.
//!
//! The winding number of every sample is treated as a latent variable next to
//! the component label, so each iteration is an exact EM step for the
//! truncated wrapped likelihood and the log-likelihood never decreases (up to
//! the variance floor). The number of components is chosen by BIC.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::{log_sum_exp, CliffMap, Cov2, Swgmm, Swnd, DEFAULT_WINDINGS};
use crate::angle::{wrap_positive, wrap_signed};
use crate::error::Result;
use crate::trajectories::{
    bin_observations, dataset_velocities, write_trajectories, CellObservations, Trajectory,
    DEFAULT_DT,
};
use crate::world::GridMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Winding truncation `K`.
    pub windings: i32,
    pub max_components: usize,
    /// Cells with fewer observations stay modelless.
    pub min_observations: usize,
    /// Floor on both diagonal covariance entries.
    pub min_variance: f64,
    pub max_iterations: usize,
    /// Relative log-likelihood improvement below which EM stops.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            windings: DEFAULT_WINDINGS,
            max_components: 5,
            min_observations: 10,
            min_variance: 1e-3,
            max_iterations: 50,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

/// Diagnostics of one EM run.
#[derive(Debug, Clone, PartialEq)]
pub struct EmTrace {
    pub components: usize,
    /// Log-likelihood before the first M-step and after each one.
    pub log_likelihood: Vec<f64>,
    pub bic: f64,
    pub converged: bool,
}

impl EmTrace {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood.last().expect("trace is never empty")
    }

    pub fn is_monotone(&self, rel_tol: f64) -> bool {
        self.log_likelihood
            .windows(2)
            .all(|w| w[1] >= w[0] - rel_tol * w[0].abs().max(1.0))
    }
}

#[derive(Debug, Clone, Copy)]
struct Component {
    beta: f64,
    mu_theta: f64,
    mu_rho: f64,
    sigma: Cov2,
}

impl Component {
    fn log_norm(&self) -> f64 {
        self.beta.ln() - TAU.ln() - 0.5 * self.sigma.det().ln()
    }
}

fn floor_covariance(mut s: Cov2, floor: f64) -> Cov2 {
    s.s11 = s.s11.max(floor);
    s.s22 = s.s22.max(floor);
    let limit = (s.s11 * s.s22).sqrt() * (1.0 - 1e-6);
    s.s12 = s.s12.clamp(-limit, limit);
    s
}

fn num_params(components: usize) -> f64 {
    (6 * components - 1) as f64
}

fn embed(u: (f64, f64)) -> [f64; 3] {
    [u.0.cos(), u.0.sin(), u.1]
}

fn dist_sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// k-means++ seeding on the `(cos θ, sin θ, ρ)` embedding followed by a hard
/// assignment. Returns `None` when `k` distinct centers cannot be found.
fn initialise(
    obs: &[(f64, f64)],
    k: usize,
    cfg: &FitConfig,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Component>> {
    let points: Vec<[f64; 3]> = obs.iter().map(|&u| embed(u)).collect();
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist_sq(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        if total <= 1e-12 {
            return None;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, d) in nearest.iter().enumerate() {
            if target < *d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = points[pick];
        for (n, p) in nearest.iter_mut().zip(&points) {
            *n = n.min(dist_sq(p, &c));
        }
        centers.push(c);
    }

    let mut members: Vec<Vec<(f64, f64)>> = vec![Vec::new(); k];
    for (u, p) in obs.iter().zip(&points) {
        let best = (0..k)
            .min_by(|&a, &b| dist_sq(p, &centers[a]).total_cmp(&dist_sq(p, &centers[b])))
            .expect("k >= 1");
        members[best].push(*u);
    }
    let n = obs.len() as f64;
    members
        .iter()
        .map(|m| {
            if m.is_empty() {
                return None;
            }
            let count = m.len() as f64;
            let (s, c) = m
                .iter()
                .fold((0.0, 0.0), |(s, c), u| (s + u.0.sin(), c + u.0.cos()));
            let mu_theta = wrap_positive(s.atan2(c));
            let mu_rho = m.iter().map(|u| u.1).sum::<f64>() / count;
            let mut cov = Cov2::new(0.0, 0.0, 0.0);
            for u in m {
                let a = wrap_signed(u.0 - mu_theta);
                let b = u.1 - mu_rho;
                cov.s11 += a * a / count;
                cov.s12 += a * b / count;
                cov.s22 += b * b / count;
            }
            Some(Component {
                beta: count / n,
                mu_theta,
                mu_rho,
                sigma: floor_covariance(cov, cfg.min_variance),
            })
        })
        .collect()
}

struct EmResult {
    components: Vec<Component>,
    trace: EmTrace,
}

/// Runs EM with `k` components. Returns `None` when initialisation fails or a
/// component collapses, in which case the caller falls back to fewer components.
fn run_em(obs: &[(f64, f64)], k: usize, cfg: &FitConfig) -> Option<EmResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(k as u64));
    let mut comps = initialise(obs, k, cfg, &mut rng)?;
    let windings = cfg.windings;
    let copies = (2 * windings + 1) as usize;
    let n = obs.len();
    // Responsibilities laid out as [sample][component][winding].
    let mut resp = vec![0.0; n * k * copies];
    let mut trace = Vec::with_capacity(cfg.max_iterations + 1);
    let mut converged = false;

    let e_step = |comps: &[Component], resp: &mut [f64]| -> f64 {
        let norms: Vec<f64> = comps.iter().map(Component::log_norm).collect();
        let mut ll = 0.0;
        for (i, u) in obs.iter().enumerate() {
            let row = &mut resp[i * k * copies..(i + 1) * k * copies];
            for (j, c) in comps.iter().enumerate() {
                let d_theta = wrap_signed(u.0 - c.mu_theta);
                let d_rho = u.1 - c.mu_rho;
                for m in 0..copies {
                    let shift = TAU * (m as i32 - windings) as f64;
                    row[j * copies + m] =
                        norms[j] - 0.5 * c.sigma.mahalanobis_sq((d_theta + shift, d_rho));
                }
            }
            let total = log_sum_exp(row.iter().copied());
            for r in row.iter_mut() {
                *r = (*r - total).exp();
            }
            ll += total;
        }
        ll
    };

    let mut ll = e_step(&comps, &mut resp);
    trace.push(ll);
    for _ in 0..cfg.max_iterations {
        let mut next = Vec::with_capacity(k);
        for (j, c) in comps.iter().enumerate() {
            let mut weight = 0.0;
            let mut shift_sum = 0.0;
            let mut rho_sum = 0.0;
            for (i, u) in obs.iter().enumerate() {
                let d_theta = wrap_signed(u.0 - c.mu_theta);
                for m in 0..copies {
                    let r = resp[(i * k + j) * copies + m];
                    weight += r;
                    shift_sum += r * (d_theta + TAU * (m as i32 - windings) as f64);
                    rho_sum += r * u.1;
                }
            }
            if weight < 2.0 {
                debug!(component = j, weight, "component collapsed");
                return None;
            }
            let shift = shift_sum / weight;
            let mu_rho = rho_sum / weight;
            let mut cov = Cov2::new(0.0, 0.0, 0.0);
            for (i, u) in obs.iter().enumerate() {
                let d_theta = wrap_signed(u.0 - c.mu_theta);
                let b = u.1 - mu_rho;
                for m in 0..copies {
                    let r = resp[(i * k + j) * copies + m];
                    let a = d_theta + TAU * (m as i32 - windings) as f64 - shift;
                    cov.s11 += r * a * a;
                    cov.s12 += r * a * b;
                    cov.s22 += r * b * b;
                }
            }
            cov = Cov2::new(cov.s11 / weight, cov.s12 / weight, cov.s22 / weight);
            next.push(Component {
                beta: weight / n as f64,
                mu_theta: wrap_positive(c.mu_theta + shift),
                mu_rho,
                sigma: floor_covariance(cov, cfg.min_variance),
            });
        }
        let total_beta: f64 = next.iter().map(|c| c.beta).sum();
        for c in &mut next {
            c.beta /= total_beta;
        }

        let next_ll = e_step(&next, &mut resp);
        if next_ll < ll - 1e-9 * ll.abs().max(1.0) {
            // Only reachable when the variance floor binds; keep the better fit.
            debug!(
                before = ll,
                after = next_ll,
                "EM log-likelihood decreased; stopping"
            );
            break;
        }
        comps = next;
        let improvement = next_ll - ll;
        ll = next_ll;
        trace.push(ll);
        if improvement <= cfg.tolerance * ll.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    let bic = -2.0 * ll + num_params(k) * (n as f64).ln();
    Some(EmResult {
        components: comps,
        trace: EmTrace {
            components: k,
            log_likelihood: trace,
            bic,
            converged,
        },
    })
}

fn to_model(components: &[Component]) -> Result<Swgmm> {
    let parts = components
        .iter()
        .map(|c| Ok((c.beta, Swnd::new(c.mu_theta, c.mu_rho, c.sigma)?)))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = parts.iter().map(|(b, _)| b).sum();
    let parts = parts
        .into_iter()
        .map(|(b, d)| ((b / total).clamp(0.0, 1.0), d))
        .collect();
    Swgmm::new(parts)
}

/// Fits a mixture to `(theta, rho)` observations, choosing the component
/// count by BIC. Returns `Ok(None)` below `cfg.min_observations`.
pub fn fit_swgmm(obs: &[(f64, f64)], cfg: &FitConfig) -> Result<Option<Swgmm>> {
    Ok(fit_swgmm_with_trace(obs, cfg)?.map(|(m, _)| m))
}

/// As [`fit_swgmm`], also returning the trace of every attempted component count.
pub fn fit_swgmm_with_trace(
    obs: &[(f64, f64)],
    cfg: &FitConfig,
) -> Result<Option<(Swgmm, Vec<EmTrace>)>> {
    if obs.is_empty() || obs.len() < cfg.min_observations {
        return Ok(None);
    }
    let mut traces = Vec::new();
    let mut best: Option<EmResult> = None;
    for k in 1..=cfg.max_components.max(1) {
        if k > obs.len() {
            break;
        }
        let Some(result) = run_em(obs, k, cfg) else {
            continue;
        };
        traces.push(result.trace.clone());
        if best.as_ref().is_none_or(|b| result.trace.bic < b.trace.bic) {
            best = Some(result);
        }
    }
    match best {
        Some(b) => Ok(Some((to_model(&b.components)?, traces))),
        None => Ok(None),
    }
}

fn cell_seed(seed: u64, index: usize) -> u64 {
    // SplitMix64 finaliser, so neighbouring cells get unrelated streams.
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fits one mixture per cell with enough observations.
pub fn build_cliffmap(binned: &CellObservations, map: &GridMap, cfg: &FitConfig) -> CliffMap {
    let mut cliff = CliffMap::from_parts(
        map.name(),
        binned.width(),
        binned.height(),
        cfg.clone(),
        String::new(),
    );
    let cells: Vec<_> = binned.iter().collect();
    let fitted: Vec<_> = cells
        .par_iter()
        .map(|(v, obs)| {
            if obs.len() < cfg.min_observations {
                return (*v, obs.len(), None);
            }
            let cell_cfg = FitConfig {
                seed: cell_seed(cfg.seed, v.y * binned.width() + v.x),
                ..cfg.clone()
            };
            match fit_swgmm(obs, &cell_cfg) {
                Ok(model) => (*v, obs.len(), model),
                Err(e) => {
                    warn!(cell = %v, error = %e, "fit failed; cell left modelless");
                    (*v, obs.len(), None)
                }
            }
        })
        .collect();
    for (v, gamma, model) in fitted {
        cliff
            .set_cell(v, gamma, model)
            .expect("binned cells lie inside the map");
    }
    cliff
}

/// Velocity extraction, binning and per-cell fitting of a whole dataset. The
/// dataset hash is taken over the dataset's canonical CSV form.
pub fn fit_cliffmap(map: &GridMap, dataset: &[Trajectory], cfg: &FitConfig) -> Result<CliffMap> {
    let obs = dataset_velocities(dataset, DEFAULT_DT)?;
    let binned = bin_observations(&obs, map);
    let mut cliff = build_cliffmap(&binned, map, cfg);
    let mut csv = Vec::new();
    write_trajectories(&mut csv, dataset)?;
    cliff.set_dataset_hash(super::dataset_hash(&csv));
    Ok(cliff)
}
