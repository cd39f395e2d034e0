//! JSON documents for motion maps.

use serde::{Deserialize, Serialize};

use super::{CliffMap, Cov2, FitConfig, Swgmm, Swnd};
use crate::error::{Error, Result};
use crate::world::{Vertex, RESOLUTION};

pub const CLIFFMAP_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Document {
    schema_version: u32,
    map_name: String,
    width: usize,
    height: usize,
    resolution: f64,
    cells: Vec<CellDoc>,
    fit_config: FitConfig,
    dataset_hash: String,
}

#[derive(Serialize, Deserialize)]
struct CellDoc {
    x: usize,
    y: usize,
    gamma: usize,
    components: Vec<ComponentDoc>,
}

#[derive(Serialize, Deserialize)]
struct ComponentDoc {
    beta: f64,
    mu_theta: f64,
    mu_rho: f64,
    sigma: [f64; 3],
}

/// Serialises `map` as a pretty-printed JSON document.
pub fn save_cliffmap(map: &CliffMap) -> String {
    let cells = map
        .cells()
        .map(|(v, cell)| CellDoc {
            x: v.x,
            y: v.y,
            gamma: cell.gamma,
            components: cell
                .model
                .iter()
                .flat_map(|m| m.components())
                .map(|(beta, d)| ComponentDoc {
                    beta: *beta,
                    mu_theta: d.mu_theta(),
                    mu_rho: d.mu_rho(),
                    sigma: [d.sigma().s11, d.sigma().s12, d.sigma().s22],
                })
                .collect(),
        })
        .collect();
    let doc = Document {
        schema_version: CLIFFMAP_SCHEMA_VERSION,
        map_name: map.map_name().to_string(),
        width: map.width(),
        height: map.height(),
        resolution: RESOLUTION,
        cells,
        fit_config: map.fit_config().clone(),
        dataset_hash: map.dataset_hash().to_string(),
    };
    serde_json::to_string_pretty(&doc).expect("cliff-map documents always serialise")
}

/// Parses and validates a motion-map document.
pub fn load_cliffmap(text: &str) -> Result<CliffMap> {
    let doc: Document = serde_json::from_str(text)?;
    if doc.schema_version != CLIFFMAP_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: doc.schema_version,
            expected: CLIFFMAP_SCHEMA_VERSION,
        });
    }
    if doc.resolution != RESOLUTION {
        return Err(Error::InvalidModel(format!(
            "unsupported resolution {}",
            doc.resolution
        )));
    }
    if doc.width == 0 || doc.height == 0 {
        return Err(Error::InvalidModel("empty map extent".into()));
    }
    let mut map = CliffMap::from_parts(
        &doc.map_name,
        doc.width,
        doc.height,
        doc.fit_config,
        doc.dataset_hash,
    );
    for cell in doc.cells {
        let v = Vertex::new(cell.x, cell.y);
        let model = if cell.components.is_empty() {
            None
        } else {
            let parts = cell
                .components
                .iter()
                .map(|c| {
                    let sigma = Cov2::new(c.sigma[0], c.sigma[1], c.sigma[2]);
                    Swnd::new(c.mu_theta, c.mu_rho, sigma)
                        .map(|d| (c.beta, d))
                        .map_err(|e| Error::InvalidModel(format!("cell {v}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(Swgmm::new(parts).map_err(|e| Error::InvalidModel(format!("cell {v}: {e}")))?)
        };
        map.set_cell(v, cell.gamma, model)?;
    }
    Ok(map)
}
