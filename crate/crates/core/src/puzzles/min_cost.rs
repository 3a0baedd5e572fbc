//! Minimum vertex-cost paths from the top-left to the bottom-right corner.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;

use super::grid::{is_simple_path, neighbors, Cell};
use super::PuzzleError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinCostPuzzle {
    pub size: usize,
    /// Positive integer vertex costs, row-major.
    pub costs: Vec<u32>,
}

impl MinCostPuzzle {
    pub fn new(size: usize, costs: Vec<u32>) -> Result<Self, PuzzleError> {
        if size < 2 || costs.len() != size * size {
            return Err(PuzzleError::InvalidPayload(format!(
                "cost grid of size {size} needs {} entries",
                size * size
            )));
        }
        if costs.contains(&0) {
            return Err(PuzzleError::InvalidPayload(
                "vertex costs must be positive".into(),
            ));
        }
        Ok(Self { size, costs })
    }

    pub fn start(&self) -> Cell {
        (0, 0)
    }

    pub fn end(&self) -> Cell {
        (self.size - 1, self.size - 1)
    }

    pub fn max_cost(&self) -> u32 {
        self.costs.iter().copied().max().unwrap_or(1)
    }

    /// Dijkstra distances from the start; a vertex's distance includes its own cost.
    fn distances(&self) -> Vec<u64> {
        let k = self.size;
        let mut dist = vec![u64::MAX; k * k];
        dist[0] = self.costs[0] as u64;
        let mut heap = BinaryHeap::from([Reverse((dist[0], 0usize))]);
        while let Some(Reverse((d, v))) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for (r, c) in neighbors((v / k, v % k), k, k) {
                let u = r * k + c;
                let nd = d + self.costs[u] as u64;
                if nd < dist[u] {
                    dist[u] = nd;
                    heap.push(Reverse((nd, u)));
                }
            }
        }
        dist
    }

    pub fn optimal_cost(&self) -> u64 {
        self.distances()[self.size * self.size - 1]
    }

    pub fn path_cost(&self, on: &[bool]) -> u64 {
        on.iter()
            .zip(&self.costs)
            .filter(|(&o, _)| o)
            .map(|(_, &c)| c as u64)
            .sum()
    }

    /// Every optimal path, enumerated backwards through the predecessor DAG.
    pub fn solve(&self, cap: usize) -> Result<Vec<Vec<bool>>, PuzzleError> {
        let k = self.size;
        let dist = self.distances();
        let mut on = vec![false; k * k];
        let mut found = Vec::new();
        fn rec(
            v: usize,
            p: &MinCostPuzzle,
            dist: &[u64],
            on: &mut Vec<bool>,
            found: &mut Vec<Vec<bool>>,
            cap: usize,
        ) -> bool {
            on[v] = true;
            let mut stop = false;
            if v == 0 {
                if found.len() == cap {
                    stop = true;
                } else {
                    found.push(on.clone());
                }
            } else {
                let k = p.size;
                for (r, c) in neighbors((v / k, v % k), k, k) {
                    let u = r * k + c;
                    if dist[u] != u64::MAX
                        && dist[u] + p.costs[v] as u64 == dist[v]
                        && rec(u, p, dist, on, found, cap)
                    {
                        stop = true;
                        break;
                    }
                }
            }
            on[v] = false;
            stop
        }
        if rec(k * k - 1, self, &dist, &mut on, &mut found, cap) {
            return Err(PuzzleError::CapExceeded { cap });
        }
        Ok(found)
    }
}

/// The marked vertices form a simple 4-connected corner-to-corner path.
pub fn is_connected_path(p: &MinCostPuzzle, on: &[bool]) -> bool {
    on.len() == p.size * p.size && is_simple_path(on, p.size, p.size, p.start(), p.end())
}

/// Rule check: a connected path whose cost equals the optimum.
pub fn is_optimal_path(p: &MinCostPuzzle, on: &[bool]) -> bool {
    is_connected_path(p, on) && p.path_cost(on) == p.optimal_cost()
}

pub fn generate<R: Rng>(
    size: usize,
    cost_range: (u32, u32),
    rng: &mut R,
) -> Result<(MinCostPuzzle, Vec<bool>), PuzzleError> {
    let (lo, hi) = cost_range;
    if lo == 0 || lo > hi {
        return Err(PuzzleError::Infeasible(format!("cost range {lo}..={hi}")));
    }
    let costs = (0..size * size)
        .map(|_| rng.random_range(lo..=hi))
        .collect();
    let p = MinCostPuzzle::new(size, costs)?;
    let first = match p.solve(1) {
        Ok(mut v) => v.pop(),
        Err(PuzzleError::CapExceeded { .. }) => p.solve(usize::MAX)?.into_iter().next(),
        Err(e) => return Err(e),
    }
    .expect("grid is connected");
    Ok((p, first))
}
