//! Fixtures shared by the benchmarks.

use flowmapf_core::cliffmap::{fit_cliffmap, CliffMap, FitConfig};
use flowmapf_core::guidance::build_guidance_graph;
use flowmapf_core::trajectories::Trajectory;
use flowmapf_core::uasim::{
    generate_dataset, to_trajectories, Area, AreaRole, MovementType, UAConfig,
};
use flowmapf_core::{GridMap, GuidanceGraph};

/// A 32x32 map with scattered 2x2 pillars.
pub fn pillar_map() -> GridMap {
    let rows: Vec<String> = (0..32)
        .map(|y| {
            (0..32)
                .map(|x| {
                    if x % 6 >= 4 && y % 6 >= 4 && x < 30 && y < 30 {
                        '@'
                    } else {
                        '.'
                    }
                })
                .collect()
        })
        .collect();
    let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
    let mut map = GridMap::from_rows(&refs).expect("valid rows");
    map.set_name("pillars32");
    map
}

/// Two opposing UA streams along rows 6-9 and 22-25.
pub fn two_streams(width: usize) -> UAConfig {
    let area = |name: &str, x0: usize, y0: usize, role, stream: &str| Area {
        name: name.into(),
        x0,
        y0,
        x1: x0 + 1,
        y1: y0 + 3,
        role,
        weight: 1.0,
        speed_multiplier: 1.0,
        stream: Some(stream.into()),
    };
    UAConfig {
        movement_type: MovementType::Directed,
        seed: 7,
        areas: vec![
            area("a-s", 0, 6, AreaRole::Start, "a"),
            area("a-g", width - 2, 6, AreaRole::Goal, "a"),
            area("b-s", width - 2, 22, AreaRole::Start, "b"),
            area("b-g", 0, 22, AreaRole::Goal, "b"),
        ],
        ..Default::default()
    }
}

pub fn dataset(map: &GridMap, n: usize) -> Vec<Trajectory> {
    to_trajectories(
        &generate_dataset(map, &two_streams(map.width()), n).expect("areas fit the map"),
    )
}

pub fn fitted(map: &GridMap, n: usize) -> CliffMap {
    fit_cliffmap(map, &dataset(map, n), &FitConfig::default()).expect("fit succeeds")
}

pub fn flow_graph(map: &GridMap, n: usize) -> GuidanceGraph {
    build_guidance_graph(map, &fitted(map, n), 1.0).expect("cliffmap matches map")
}
