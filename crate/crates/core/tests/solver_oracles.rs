use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::sync::Arc;

use flowmapf_core::cliffmap::{CliffMap, Cov2, Swgmm, Swnd};
use flowmapf_core::guidance::{build_guidance_graph, precompute_heuristic};
use flowmapf_core::solver::{
    cbs_solve, detect_conflicts, sipp, spacetime_astar, ConstraintTable, LowLevelRequest,
    SearchFailure,
};
use flowmapf_core::world::random_scenario;
use flowmapf_core::{CbsConfig, GridMap, GuidanceGraph, TimedPath, Vertex};
use ordered_float::OrderedFloat;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> GridMap {
    loop {
        let passable: Vec<bool> = (0..w * h).map(|_| !rng.random_bool(density)).collect();
        if passable.iter().filter(|p| **p).count() >= 4 {
            return GridMap::new("r", w, h, passable).unwrap();
        }
    }
}

/// A guidance graph with a random single-mode flow model in about half the cells.
fn random_flow_graph(rng: &mut ChaCha8Rng, map: &GridMap) -> GuidanceGraph {
    let mut cliff = CliffMap::empty(map);
    for v in map.passable_vertices().collect::<Vec<_>>() {
        if rng.random_bool(0.5) {
            let d = Swnd::new(
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.2..1.5),
                Cov2::new(
                    rng.random_range(0.05..0.5),
                    0.0,
                    rng.random_range(0.05..0.5),
                ),
            )
            .unwrap();
            cliff
                .set_cell(v, rng.random_range(10..200), Some(Swgmm::single(d)))
                .unwrap();
        }
    }
    build_guidance_graph(map, &cliff, 1.0).unwrap()
}

fn random_blocks(
    rng: &mut ChaCha8Rng,
    gg: &GuidanceGraph,
    n: usize,
    t_max: usize,
) -> ConstraintTable {
    let cells: Vec<usize> = (0..gg.num_cells()).filter(|&i| gg.is_passable(i)).collect();
    let mut ct = ConstraintTable::new();
    for _ in 0..n {
        let v = cells[rng.random_range(0..cells.len())];
        let t = rng.random_range(1..=t_max);
        if rng.random_bool(0.7) {
            ct.block_vertex(v, t);
        } else {
            let e: Vec<_> = gg.edges(v).filter(|e| e.to != v).collect();
            if !e.is_empty() {
                let e = e[rng.random_range(0..e.len())];
                ct.block_edge(v, e.to, t);
            }
        }
    }
    ct
}

/// Dijkstra over (vertex, time) up to `t_max`; the agent must be able to stay
/// at the goal forever after arriving.
fn time_expanded_optimum(
    gg: &GuidanceGraph,
    ct: &ConstraintTable,
    start: usize,
    goal: usize,
    t_max: usize,
) -> Option<f64> {
    let mut best: HashMap<(usize, usize), f64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    if ct.vertex_blocked(start, 0) {
        return None;
    }
    best.insert((start, 0), 0.0);
    heap.push(Reverse((OrderedFloat(0.0), start, 0usize)));
    let mut answer: Option<f64> = None;
    while let Some(Reverse((OrderedFloat(g), v, t))) = heap.pop() {
        if best.get(&(v, t)).is_some_and(|&b| b < g) {
            continue;
        }
        if v == goal && (t + 1..=t_max).all(|u| !ct.vertex_blocked(goal, u)) {
            answer = Some(answer.map_or(g, |a: f64| a.min(g)));
        }
        if t == t_max {
            continue;
        }
        for e in gg.edges(v) {
            if ct.vertex_blocked(e.to, t + 1) || ct.edge_blocked(v, e.to, t) {
                continue;
            }
            let ng = g + e.omega;
            if best.get(&(e.to, t + 1)).is_none_or(|&b| ng < b) {
                best.insert((e.to, t + 1), ng);
                heap.push(Reverse((OrderedFloat(ng), e.to, t + 1)));
            }
        }
    }
    answer
}

/// Recomputes the cost of `path` edge by edge and checks it against the blocks.
fn check_path(gg: &GuidanceGraph, ct: &ConstraintTable, path: &TimedPath) -> f64 {
    let mut cost = 0.0;
    for (k, w) in path.vertices.windows(2).enumerate() {
        let t = path.start_time + k;
        let (a, b) = (gg.index(w[0]), gg.index(w[1]));
        assert!(
            !ct.vertex_blocked(b, t + 1),
            "enters blocked {} at {}",
            w[1],
            t + 1
        );
        assert!(!ct.edge_blocked(a, b, t), "uses blocked edge at {t}");
        cost += if a == b {
            gg.wait_omega(a)
        } else {
            gg.omega_between(a, b).expect("adjacent")
        };
    }
    cost
}

fn request<'a>(
    gg: &GuidanceGraph,
    ct: &'a ConstraintTable,
    s: Vertex,
    g: Vertex,
) -> LowLevelRequest<'a> {
    let h = Arc::new(precompute_heuristic(gg, g).unwrap());
    LowLevelRequest::new(0, s, vec![g], vec![h], ct)
}

#[test]
fn astar_matches_time_expanded_dijkstra() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 50 {
        let map = random_map(&mut rng, 6, 6, 0.2);
        let gg = random_flow_graph(&mut rng, &map);
        let cells: Vec<Vertex> = map.passable_vertices().collect();
        let s = cells[rng.random_range(0..cells.len())];
        let g = cells[rng.random_range(0..cells.len())];
        let ct = random_blocks(&mut rng, &gg, 12, 10);
        let t_max = 10 + 2 * map.num_cells();
        let oracle = time_expanded_optimum(&gg, &ct, gg.index(s), gg.index(g), t_max);
        let found = spacetime_astar(&gg, &request(&gg, &ct, s, g));
        match (oracle, found) {
            (Some(c), Ok(out)) => {
                assert!(
                    (out.path.cost - c).abs() < 1e-9,
                    "A* {} vs oracle {c}",
                    out.path.cost
                );
                assert!((check_path(&gg, &ct, &out.path) - c).abs() < 1e-9);
                assert_eq!(out.path.last(), g);
            }
            (None, Err(SearchFailure::NoPath | SearchFailure::StartBlocked)) => {}
            (o, f) => panic!("oracle {o:?}, search {:?}", f.map(|o| o.path.cost)),
        }
        checked += 1;
    }
}

#[test]
fn sipp_matches_astar_on_weighted_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..60 {
        let map = random_map(&mut rng, 7, 7, 0.15);
        let gg = random_flow_graph(&mut rng, &map);
        let cells: Vec<Vertex> = map.passable_vertices().collect();
        let s = cells[rng.random_range(0..cells.len())];
        let g = cells[rng.random_range(0..cells.len())];
        let ct = random_blocks(&mut rng, &gg, 20, 15);
        let req = request(&gg, &ct, s, g);
        match (spacetime_astar(&gg, &req), sipp(&gg, &req)) {
            (Ok(a), Ok(b)) => {
                assert!(
                    (a.path.cost - b.path.cost).abs() < 1e-9,
                    "A* {} SIPP {}",
                    a.path.cost,
                    b.path.cost
                );
                assert!((check_path(&gg, &ct, &b.path) - b.path.cost).abs() < 1e-9);
            }
            (Err(_), Err(_)) => {}
            (a, b) => panic!(
                "A* {:?} vs SIPP {:?}",
                a.map(|o| o.path.cost),
                b.map(|o| o.path.cost)
            ),
        }
    }
}

#[test]
fn focal_low_level_stays_within_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let map = random_map(&mut rng, 8, 8, 0.15);
        let gg = random_flow_graph(&mut rng, &map);
        let cells: Vec<Vertex> = map.passable_vertices().collect();
        let s = cells[rng.random_range(0..cells.len())];
        let g = cells[rng.random_range(0..cells.len())];
        let ct = random_blocks(&mut rng, &gg, 15, 12);
        let Ok(opt) = spacetime_astar(&gg, &request(&gg, &ct, s, g)) else {
            continue;
        };
        let loose = spacetime_astar(&gg, &request(&gg, &ct, s, g).omega1(1.5)).unwrap();
        assert!(loose.path.cost <= 1.5 * opt.path.cost + 1e-9);
        assert!(loose.lower_bound <= opt.path.cost + 1e-9);
    }
}

#[test]
fn goal_sequences_match_chained_oracle_on_open_grids() {
    // Without blocks, visiting goals in order costs the sum of leg distances.
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..30 {
        let map = random_map(&mut rng, 6, 6, 0.1);
        let gg = random_flow_graph(&mut rng, &map);
        let cells: Vec<Vertex> = map.passable_vertices().collect();
        let pick = |rng: &mut ChaCha8Rng| cells[rng.random_range(0..cells.len())];
        let (s, g1, g2) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
        let ct = ConstraintTable::new();
        let legs = [(s, g1), (g1, g2)]
            .iter()
            .map(|&(a, b)| {
                time_expanded_optimum(&gg, &ct, gg.index(a), gg.index(b), 2 * map.num_cells())
            })
            .collect::<Option<Vec<f64>>>();
        let hs = [g1, g2]
            .iter()
            .map(|&g| Arc::new(precompute_heuristic(&gg, g).unwrap()))
            .collect();
        let req = LowLevelRequest::new(0, s, vec![g1, g2], hs, &ct);
        match (legs, spacetime_astar(&gg, &req)) {
            (Some(l), Ok(out)) => {
                assert!((out.path.cost - l.iter().sum::<f64>()).abs() < 1e-9);
                assert!(out.path.vertices.contains(&g1));
                assert_eq!(out.path.last(), g2);
            }
            (None, Err(_)) => {}
            (l, o) => panic!("legs {l:?} vs search {:?}", o.map(|o| o.path.cost)),
        }
    }
}

fn small_instance() -> impl Strategy<Value = (u64, usize, bool)> {
    (any::<u64>(), 2usize..=5, any::<bool>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn cbs_solutions_are_valid((seed, agents, weighted) in small_instance()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = random_map(&mut rng, 6, 6, 0.15);
        let Ok(sc) = random_scenario(&map, agents, seed) else { return Ok(()); };
        let gg = if weighted { random_flow_graph(&mut rng, &map) } else { GuidanceGraph::uniform(&map, 1.0).unwrap() };
        let cfg = CbsConfig { omega1: 1.2, node_limit: Some(20_000), ..Default::default() };
        let Ok(sol) = cbs_solve(&gg, &sc, &cfg) else { return Ok(()); };
        prop_assert!(detect_conflicts(&sol.paths, None).is_empty());
        let empty = ConstraintTable::new();
        let mut total = 0.0;
        for (p, task) in sol.paths.iter().zip(&sc.agents) {
            prop_assert_eq!(p.first(), task.start);
            prop_assert_eq!(p.last(), task.goal);
            let c = check_path(&gg, &empty, p);
            prop_assert!((c - p.cost).abs() < 1e-9);
            total += c;
        }
        prop_assert!((total - sol.cost).abs() < 1e-9);

        let opt = cbs_solve(&gg, &sc, &CbsConfig { omega1: 1.0, ..cfg.clone() });
        if let Ok(opt) = opt {
            prop_assert!(opt.cost <= sol.cost + 1e-9);
            prop_assert!(sol.cost <= 1.2 * opt.cost + 1e-9);
        }
    }
}
