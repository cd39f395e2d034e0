use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::sync::{Arc, Mutex};

use ordered_float::OrderedFloat;

use super::GuidanceGraph;
use crate::error::{Error, Result};
use crate::world::{Action, Vertex};

/// Exact cost-to-go towards one goal on a guidance graph.
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicTable {
    goal: Vertex,
    goal_index: usize,
    h: Vec<f64>,
}

impl HeuristicTable {
    pub fn goal(&self) -> Vertex {
        self.goal
    }

    pub fn goal_index(&self) -> usize {
        self.goal_index
    }

    /// Cost-to-go from cell `index`; infinite when unreachable or blocked.
    pub fn get(&self, index: usize) -> f64 {
        self.h[index]
    }

    pub fn values(&self) -> &[f64] {
        &self.h
    }
}

/// Dijkstra from `goal` over reversed edges.
pub fn precompute_heuristic(gg: &GuidanceGraph, goal: Vertex) -> Result<HeuristicTable> {
    let map = gg.map();
    if !map.in_bounds(goal) {
        return Err(Error::OutOfBounds(goal));
    }
    if !map.is_passable(goal) {
        return Err(Error::Blocked(goal));
    }
    let goal_index = gg.index(goal);
    let mut h = vec![f64::INFINITY; gg.num_cells()];
    let mut heap = BinaryHeap::new();
    h[goal_index] = 0.0;
    heap.push((Reverse(OrderedFloat(0.0)), goal_index));
    while let Some((Reverse(OrderedFloat(d)), v)) = heap.pop() {
        if d > h[v] {
            continue;
        }
        // Predecessors of v are the cells one move away whose edge leads back to v.
        for e in gg.edges(v) {
            if e.action == Action::Wait {
                continue;
            }
            let u = e.to;
            let back = Action::between(gg.vertex(u), gg.vertex(v)).expect("adjacent cells");
            if let Some(edge) = gg.edge(u, back) {
                let nd = d + edge.omega;
                if nd < h[u] {
                    h[u] = nd;
                    heap.push((Reverse(OrderedFloat(nd)), u));
                }
            }
        }
    }
    Ok(HeuristicTable {
        goal,
        goal_index,
        h,
    })
}

/// Lazily computed heuristic tables keyed by goal, shareable across threads.
#[derive(Debug, Default)]
pub struct HeuristicCache {
    tables: Mutex<HashMap<Vertex, Arc<HeuristicTable>>>,
}

impl HeuristicCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, gg: &GuidanceGraph, goal: Vertex) -> Result<Arc<HeuristicTable>> {
        if let Some(t) = self.tables.lock().expect("cache lock").get(&goal) {
            return Ok(t.clone());
        }
        let table = Arc::new(precompute_heuristic(gg, goal)?);
        self.tables
            .lock()
            .expect("cache lock")
            .entry(goal)
            .or_insert_with(|| table.clone());
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.tables.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cliffmap::{CliffMap, Cov2, Swgmm, Swnd};
    use crate::guidance::build_guidance_graph;
    use crate::world::GridMap;

    /// All-pairs Floyd–Warshall over the explicit edge list.
    fn floyd_warshall(gg: &GuidanceGraph) -> Vec<Vec<f64>> {
        let n = gg.num_cells();
        let mut d = vec![vec![f64::INFINITY; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        for (u, e) in gg.all_edges() {
            if e.to != u {
                d[u][e.to] = d[u][e.to].min(e.omega);
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = d[i][k] + d[k][j];
                    if via < d[i][j] {
                        d[i][j] = via;
                    }
                }
            }
        }
        d
    }

    fn weighted_4x4() -> GuidanceGraph {
        let map = GridMap::from_rows(&["....", ".@..", "..@.", "...."]).unwrap();
        let mut cliff = CliffMap::empty(&map);
        let models = [
            (Vertex::new(0, 0), 0.0, 30),
            (Vertex::new(1, 0), 4.7, 12),
            (Vertex::new(3, 1), 3.1, 80),
            (Vertex::new(1, 3), 1.6, 15),
            (Vertex::new(2, 3), 0.4, 44),
        ];
        for (v, theta, gamma) in models {
            let m = Swgmm::single(Swnd::new(theta, 1.0, Cov2::diag(0.2, 0.1)).unwrap());
            cliff.set_cell(v, gamma, Some(m)).unwrap();
        }
        build_guidance_graph(&map, &cliff, 1.0).unwrap()
    }

    #[test]
    fn manhattan_on_open_map() {
        let map = GridMap::open(6, 5);
        let gg = GuidanceGraph::uniform(&map, 1.0).unwrap();
        let goal = Vertex::new(4, 1);
        let h = precompute_heuristic(&gg, goal).unwrap();
        assert_eq!(h.get(gg.index(goal)), 0.0);
        for v in map.passable_vertices() {
            assert_eq!(h.get(gg.index(v)), v.manhattan(goal) as f64);
        }
    }

    #[test]
    fn matches_floyd_warshall() {
        let gg = weighted_4x4();
        let d = floyd_warshall(&gg);
        for goal in gg.map().passable_vertices() {
            let h = precompute_heuristic(&gg, goal).unwrap();
            for v in gg.map().passable_vertices() {
                let want = d[gg.index(v)][gg.index(goal)];
                assert!((h.get(gg.index(v)) - want).abs() < 1e-9, "{v} -> {goal}");
            }
        }
    }

    #[test]
    fn consistent_on_every_edge() {
        let gg = weighted_4x4();
        for goal in gg.map().passable_vertices() {
            let h = precompute_heuristic(&gg, goal).unwrap();
            for (u, e) in gg.all_edges() {
                assert!(h.get(u) <= e.omega + h.get(e.to) + 1e-9);
            }
        }
    }

    #[test]
    fn unreachable_and_blocked() {
        let map = GridMap::from_rows(&[".@.", ".@."]).unwrap();
        let gg = GuidanceGraph::uniform(&map, 1.0).unwrap();
        let h = precompute_heuristic(&gg, Vertex::new(0, 0)).unwrap();
        assert!(h.get(gg.index(Vertex::new(2, 0))).is_infinite());
        assert!(precompute_heuristic(&gg, Vertex::new(1, 0)).is_err());
    }

    #[test]
    fn cache_reuses_tables() {
        let gg = weighted_4x4();
        let cache = HeuristicCache::new();
        let a = cache.get(&gg, Vertex::new(0, 0)).unwrap();
        let b = cache.get(&gg, Vertex::new(0, 0)).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(cache.len(), 1);
    }
}
