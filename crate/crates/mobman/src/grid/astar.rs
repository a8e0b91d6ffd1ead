//! A* search over the occupancy grid. The open list is a priority queue on
//! `f = g + h` with deterministic tie-breaking (larger g first, then
//! row-major cell index), so node counts are reproducible and comparable
//! across heuristics.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::{Cell, GridMap};
use crate::{Error, Result};

/// Neighborhood of a grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    Four,
    Eight,
}

/// Distance estimate used for the A* forward cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heuristic {
    Manhattan,
    Euclidean,
}

/// Heuristic estimate from `cell` to `goal` in cell units.
pub fn heuristic_value(kind: Heuristic, cell: Cell, goal: Cell) -> f64 {
    let dx = (cell.x as f64 - goal.x as f64).abs();
    let dy = (cell.y as f64 - goal.y as f64).abs();
    match kind {
        Heuristic::Manhattan => dx + dy,
        Heuristic::Euclidean => dx.hypot(dy),
    }
}

/// Output of one A* query.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    /// Start-to-goal cell sequence; empty when no path exists.
    pub path: Vec<Cell>,
    /// Path cost in cell units: axis steps count 1, diagonal steps sqrt(2).
    pub cost: f64,
    /// Closed-set insertions performed before the search ended.
    pub nodes_expanded: usize,
    pub found: bool,
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;

struct OpenEntry {
    f: f64,
    g: f64,
    index: usize,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenEntry {}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OpenEntry {
    // BinaryHeap pops the maximum, so "greater" must mean "expand sooner":
    // smallest f, then largest g, then smallest row-major index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(self.g.total_cmp(&other.g))
            .then(other.index.cmp(&self.index))
    }
}

/// Offsets of the four axis moves followed by the four diagonals, in a fixed
/// deterministic order.
const AXIS_MOVES: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
const DIAGONAL_MOVES: [(isize, isize); 4] = [(1, 1), (1, -1), (-1, 1), (-1, -1)];

fn offset(map: &GridMap, cell: Cell, d: (isize, isize)) -> Option<Cell> {
    let x = cell.x as isize + d.0;
    let y = cell.y as isize + d.1;
    if x < 0 || y < 0 {
        return None;
    }
    let c = Cell::new(x as usize, y as usize);
    map.in_bounds(c).then_some(c)
}

fn neighbors(map: &GridMap, cell: Cell, connectivity: Connectivity, out: &mut Vec<(Cell, f64)>) {
    out.clear();
    for d in AXIS_MOVES {
        if let Some(c) = offset(map, cell, d) {
            if !map.is_occupied(c) {
                out.push((c, 1.0));
            }
        }
    }
    if connectivity == Connectivity::Eight {
        for d in DIAGONAL_MOVES {
            if let Some(c) = offset(map, cell, d) {
                // No corner cutting: both adjacent axis cells must be free
                // for a diagonal move, or the base would clip the obstacle.
                let side_a = offset(map, cell, (d.0, 0));
                let side_b = offset(map, cell, (0, d.1));
                let open = side_a.is_some_and(|s| !map.is_occupied(s))
                    && side_b.is_some_and(|s| !map.is_occupied(s));
                if open && !map.is_occupied(c) {
                    out.push((c, SQRT_2));
                }
            }
        }
    }
}

/// Canonical cost of a cell path: number of axis steps plus sqrt(2) times
/// the number of diagonal steps. Evaluating the cost this way makes equal
/// step counts compare exactly equal regardless of traversal order.
pub(crate) fn path_cost(path: &[Cell]) -> f64 {
    let mut axis = 0usize;
    let mut diagonal = 0usize;
    for pair in path.windows(2) {
        let dx = pair[0].x.abs_diff(pair[1].x);
        let dy = pair[0].y.abs_diff(pair[1].y);
        if dx + dy == 1 {
            axis += 1;
        } else {
            diagonal += 1;
        }
    }
    axis as f64 + diagonal as f64 * SQRT_2
}

/// Best-first search on `f = g + h`. With an admissible heuristic for the
/// chosen connectivity the returned cost is optimal.
pub fn astar(
    map: &GridMap,
    start: Cell,
    goal: Cell,
    connectivity: Connectivity,
    heuristic: Heuristic,
) -> Result<PlanResult> {
    for (name, cell) in [("start", start), ("goal", goal)] {
        if !map.in_bounds(cell) {
            return Err(Error::InvalidArgument(format!(
                "{name} cell ({}, {}) outside the {}x{} map",
                cell.x,
                cell.y,
                map.width(),
                map.height()
            )));
        }
        if map.is_occupied(cell) {
            return Err(Error::InvalidArgument(format!(
                "{name} cell ({}, {}) is occupied",
                cell.x, cell.y
            )));
        }
    }

    let size = map.width() * map.height();
    let mut g_score = vec![f64::INFINITY; size];
    let mut came_from = vec![usize::MAX; size];
    let mut closed = vec![false; size];
    let mut open = BinaryHeap::new();
    let mut nodes_expanded = 0usize;
    let mut scratch = Vec::with_capacity(8);

    g_score[map.index(start)] = 0.0;
    open.push(OpenEntry {
        f: heuristic_value(heuristic, start, goal),
        g: 0.0,
        index: map.index(start),
    });

    while let Some(entry) = open.pop() {
        if closed[entry.index] {
            continue; // stale queue entry
        }
        closed[entry.index] = true;
        nodes_expanded += 1;
        let current = Cell::new(entry.index % map.width(), entry.index / map.width());
        if current == goal {
            let mut path = vec![current];
            let mut idx = entry.index;
            while came_from[idx] != usize::MAX {
                idx = came_from[idx];
                path.push(Cell::new(idx % map.width(), idx / map.width()));
            }
            path.reverse();
            let cost = path_cost(&path);
            return Ok(PlanResult { path, cost, nodes_expanded, found: true });
        }

        neighbors(map, current, connectivity, &mut scratch);
        for &(next, step) in &scratch {
            let ni = map.index(next);
            if closed[ni] {
                continue;
            }
            let tentative = entry.g + step;
            if tentative < g_score[ni] {
                g_score[ni] = tentative;
                came_from[ni] = entry.index;
                open.push(OpenEntry {
                    f: tentative + heuristic_value(heuristic, next, goal),
                    g: tentative,
                    index: ni,
                });
            }
        }
    }

    Ok(PlanResult { path: Vec::new(), cost: f64::INFINITY, nodes_expanded, found: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn empty_map(w: usize, h: usize) -> GridMap {
        GridMap::new(w, h, 1.0, (0.0, 0.0), vec![false; w * h]).unwrap()
    }

    fn random_map(rng: &mut StdRng, w: usize, h: usize, density: f64) -> GridMap {
        let occupancy = (0..w * h).map(|_| rng.random_bool(density)).collect();
        GridMap::new(w, h, 1.0, (0.0, 0.0), occupancy).unwrap()
    }

    /// Independent Dijkstra oracle with its own adjacency logic.
    fn dijkstra_oracle(
        map: &GridMap,
        start: Cell,
        goal: Cell,
        connectivity: Connectivity,
    ) -> Option<(f64, Vec<Cell>)> {
        let w = map.width();
        let size = w * map.height();
        let idx = |c: Cell| c.y * w + c.x;
        let mut dist = vec![f64::INFINITY; size];
        let mut prev = vec![usize::MAX; size];
        let mut done = vec![false; size];
        dist[idx(start)] = 0.0;
        loop {
            // Linear scan min extraction keeps the oracle dead simple.
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for i in 0..size {
                if !done[i] && dist[i] < best_d {
                    best = i;
                    best_d = dist[i];
                }
            }
            if best == usize::MAX {
                return None;
            }
            done[best] = true;
            let cell = Cell::new(best % w, best / w);
            if cell == goal {
                let mut path = vec![cell];
                let mut i = best;
                while prev[i] != usize::MAX {
                    i = prev[i];
                    path.push(Cell::new(i % w, i / w));
                }
                path.reverse();
                return Some((path_cost(&path), path));
            }
            let deltas: &[(isize, isize, f64)] = match connectivity {
                Connectivity::Four => &[(1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0)],
                Connectivity::Eight => &[
                    (1, 0, 1.0),
                    (-1, 0, 1.0),
                    (0, 1, 1.0),
                    (0, -1, 1.0),
                    (1, 1, SQRT_2),
                    (1, -1, SQRT_2),
                    (-1, 1, SQRT_2),
                    (-1, -1, SQRT_2),
                ],
            };
            for &(dx, dy, cost) in deltas {
                let nx = cell.x as isize + dx;
                let ny = cell.y as isize + dy;
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= map.height() {
                    continue;
                }
                let next = Cell::new(nx as usize, ny as usize);
                if map.is_occupied(next) {
                    continue;
                }
                if dx != 0 && dy != 0 {
                    let a = Cell::new((cell.x as isize + dx) as usize, cell.y);
                    let b = Cell::new(cell.x, (cell.y as isize + dy) as usize);
                    if map.is_occupied(a) || map.is_occupied(b) {
                        continue;
                    }
                }
                let nd = best_d + cost;
                if nd < dist[idx(next)] {
                    dist[idx(next)] = nd;
                    prev[idx(next)] = best;
                }
            }
        }
    }

    fn assert_path_valid(map: &GridMap, result: &PlanResult, start: Cell, goal: Cell) {
        assert_eq!(result.path.first(), Some(&start));
        assert_eq!(result.path.last(), Some(&goal));
        for c in &result.path {
            assert!(map.is_free(*c), "path crosses occupied cell {c:?}");
        }
        for pair in result.path.windows(2) {
            let dx = pair[0].x.abs_diff(pair[1].x);
            let dy = pair[0].y.abs_diff(pair[1].y);
            assert!(dx <= 1 && dy <= 1 && dx + dy > 0, "non-adjacent step {pair:?}");
        }
    }

    #[test]
    fn straight_line_four_connected() {
        let map = empty_map(5, 5);
        let r = astar(&map, Cell::new(0, 0), Cell::new(0, 4), Connectivity::Four, Heuristic::Manhattan)
            .unwrap();
        assert!(r.found);
        assert_eq!(r.path.len(), 5);
        assert!((r.cost - 4.0).abs() < 1e-15);
    }

    #[test]
    fn straight_diagonal_eight_connected() {
        let map = empty_map(5, 5);
        let r = astar(&map, Cell::new(0, 0), Cell::new(4, 4), Connectivity::Eight, Heuristic::Euclidean)
            .unwrap();
        assert!(r.found);
        assert!((r.cost - 4.0 * SQRT_2).abs() < 1e-12, "cost {}", r.cost);
    }

    #[test]
    fn invalid_endpoints_rejected() {
        let mut occ = vec![false; 25];
        occ[12] = true; // (2, 2)
        let map = GridMap::new(5, 5, 1.0, (0.0, 0.0), occ).unwrap();
        assert!(astar(&map, Cell::new(2, 2), Cell::new(0, 0), Connectivity::Four, Heuristic::Manhattan).is_err());
        assert!(astar(&map, Cell::new(0, 0), Cell::new(2, 2), Connectivity::Four, Heuristic::Manhattan).is_err());
        assert!(astar(&map, Cell::new(9, 0), Cell::new(0, 0), Connectivity::Four, Heuristic::Manhattan).is_err());
    }

    #[test]
    fn unreachable_goal_reports_expansions() {
        let text = "{\"resolution\":1.0,\"origin\":[0,0]}\n...#.\n...#.\n...#.\n...#.\n...#.\n";
        let map = GridMap::parse(text).unwrap();
        let r = astar(&map, Cell::new(0, 0), Cell::new(4, 2), Connectivity::Eight, Heuristic::Euclidean)
            .unwrap();
        assert!(!r.found);
        assert!(r.path.is_empty());
        assert!(r.nodes_expanded > 0);
    }

    #[test]
    fn heuristic_values() {
        let goal = Cell::new(3, 4);
        assert_eq!(heuristic_value(Heuristic::Manhattan, goal, goal), 0.0);
        assert_eq!(heuristic_value(Heuristic::Euclidean, goal, goal), 0.0);
        let cell = Cell::new(1, 2);
        assert!((heuristic_value(Heuristic::Manhattan, cell, goal) - 4.0).abs() < 1e-15);
        assert!(
            (heuristic_value(Heuristic::Euclidean, cell, goal) - 8.0f64.sqrt()).abs() < 1e-15
        );
    }

    #[test]
    fn manhattan_overestimates_on_eight_connected() {
        // True eight-connected cost across a (2, 2) offset on an empty map
        // is 2 sqrt(2) < 4 = manhattan: inadmissible for that connectivity.
        let map = empty_map(5, 5);
        let r = astar(&map, Cell::new(0, 0), Cell::new(2, 2), Connectivity::Eight, Heuristic::Euclidean)
            .unwrap();
        let true_cost = r.cost;
        let manhattan = heuristic_value(Heuristic::Manhattan, Cell::new(0, 0), Cell::new(2, 2));
        assert!((true_cost - 2.0 * SQRT_2).abs() < 1e-12);
        assert!(manhattan > true_cost + 1e-9);
    }

    #[test]
    fn euclidean_never_exceeds_manhattan() {
        let goal = Cell::new(17, 3);
        for x in 0..32 {
            for y in 0..32 {
                let c = Cell::new(x, y);
                assert!(
                    heuristic_value(Heuristic::Euclidean, c, goal)
                        <= heuristic_value(Heuristic::Manhattan, c, goal) + 1e-12
                );
            }
        }
    }

    #[test]
    fn optimal_costs_match_dijkstra_on_random_maps() {
        let mut rng = StdRng::seed_from_u64(83);
        let cases = [
            (Connectivity::Four, Heuristic::Manhattan),
            (Connectivity::Four, Heuristic::Euclidean),
            (Connectivity::Eight, Heuristic::Euclidean),
        ];
        for trial in 0..50 {
            let map = random_map(&mut rng, 32, 32, 0.3);
            let start = Cell::new(rng.random_range(0..32), rng.random_range(0..32));
            let goal = Cell::new(rng.random_range(0..32), rng.random_range(0..32));
            if !map.is_free(start) || !map.is_free(goal) {
                continue;
            }
            for (conn, heur) in cases {
                let r = astar(&map, start, goal, conn, heur).unwrap();
                let oracle = dijkstra_oracle(&map, start, goal, conn);
                match oracle {
                    None => assert!(!r.found, "trial {trial}: oracle finds no path"),
                    Some((cost, _)) => {
                        assert!(r.found, "trial {trial}: path exists but A* missed it");
                        assert_eq!(r.cost, cost, "trial {trial} ({conn:?}, {heur:?})");
                        assert_path_valid(&map, &r, start, goal);
                    }
                }
            }
        }
    }

    #[test]
    fn admissible_heuristics_bounded_by_oracle_cost() {
        let mut rng = StdRng::seed_from_u64(89);
        for _ in 0..5 {
            let map = random_map(&mut rng, 16, 16, 0.25);
            let goal = Cell::new(rng.random_range(0..16), rng.random_range(0..16));
            if !map.is_free(goal) {
                continue;
            }
            for x in 0..16 {
                for y in 0..16 {
                    let c = Cell::new(x, y);
                    if !map.is_free(c) {
                        continue;
                    }
                    if let Some((four_cost, _)) = dijkstra_oracle(&map, c, goal, Connectivity::Four)
                    {
                        assert!(heuristic_value(Heuristic::Manhattan, c, goal) <= four_cost + 1e-9);
                        assert!(heuristic_value(Heuristic::Euclidean, c, goal) <= four_cost + 1e-9);
                    }
                    if let Some((eight_cost, _)) =
                        dijkstra_oracle(&map, c, goal, Connectivity::Eight)
                    {
                        assert!(
                            heuristic_value(Heuristic::Euclidean, c, goal) <= eight_cost + 1e-9
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn more_informed_heuristic_expands_no_more_nodes() {
        // On four-connected grids both heuristics are admissible and
        // manhattan dominates euclidean pointwise, so it never expands more.
        let mut rng = StdRng::seed_from_u64(97);
        for _ in 0..30 {
            let map = random_map(&mut rng, 24, 24, 0.2);
            let start = Cell::new(rng.random_range(0..24), rng.random_range(0..24));
            let goal = Cell::new(rng.random_range(0..24), rng.random_range(0..24));
            if !map.is_free(start) || !map.is_free(goal) {
                continue;
            }
            let m = astar(&map, start, goal, Connectivity::Four, Heuristic::Manhattan).unwrap();
            let e = astar(&map, start, goal, Connectivity::Four, Heuristic::Euclidean).unwrap();
            assert_eq!(m.found, e.found);
            if m.found {
                assert_eq!(m.cost, e.cost);
            }
            assert!(
                m.nodes_expanded <= e.nodes_expanded,
                "manhattan {} > euclidean {}",
                m.nodes_expanded,
                e.nodes_expanded
            );
        }
    }

    #[test]
    fn no_corner_cutting() {
        // Two diagonal obstacles pinch the direct diagonal; the path must
        // go around.
        let text = "{\"resolution\":1.0,\"origin\":[0,0]}\n.#.\n#..\n...\n";
        let map = GridMap::parse(text).unwrap();
        let r = astar(&map, Cell::new(0, 0), Cell::new(2, 2), Connectivity::Eight, Heuristic::Euclidean)
            .unwrap();
        assert!(!r.found, "diagonal squeeze must be blocked, got {:?}", r.path);
    }

    #[test]
    fn deterministic_results() {
        let mut rng = StdRng::seed_from_u64(101);
        let map = random_map(&mut rng, 32, 32, 0.3);
        let start = Cell::new(1, 1);
        let goal = Cell::new(30, 28);
        if !map.is_free(start) || !map.is_free(goal) {
            return;
        }
        let a = astar(&map, start, goal, Connectivity::Eight, Heuristic::Euclidean).unwrap();
        let b = astar(&map, start, goal, Connectivity::Eight, Heuristic::Euclidean).unwrap();
        assert_eq!(a, b);
    }
}
