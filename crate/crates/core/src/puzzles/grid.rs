//! 4-neighbour grid helpers shared by the path-shaped tasks.

use std::collections::VecDeque;

pub type Cell = (usize, usize);

/// Up, down, left, right; in-bounds only.
pub fn neighbors(c: Cell, rows: usize, cols: usize) -> Vec<Cell> {
    let mut out = Vec::with_capacity(4);
    if c.0 > 0 {
        out.push((c.0 - 1, c.1));
    }
    if c.0 + 1 < rows {
        out.push((c.0 + 1, c.1));
    }
    if c.1 > 0 {
        out.push((c.0, c.1 - 1));
    }
    if c.1 + 1 < cols {
        out.push((c.0, c.1 + 1));
    }
    out
}

/// True when the marked cells are exactly one simple 4-connected path from
/// `start` to `end`: endpoints have one marked neighbour, every other marked
/// cell two, and all marked cells are reachable from `start`.
pub fn is_simple_path(on: &[bool], rows: usize, cols: usize, start: Cell, end: Cell) -> bool {
    let id = |c: Cell| c.0 * cols + c.1;
    if start == end || !on[id(start)] || !on[id(end)] {
        return false;
    }
    for r in 0..rows {
        for c in 0..cols {
            if !on[id((r, c))] {
                continue;
            }
            let deg = neighbors((r, c), rows, cols)
                .into_iter()
                .filter(|&n| on[id(n)])
                .count();
            let want = if (r, c) == start || (r, c) == end {
                1
            } else {
                2
            };
            if deg != want {
                return false;
            }
        }
    }
    let mut seen = vec![false; on.len()];
    let mut queue = VecDeque::from([start]);
    seen[id(start)] = true;
    let mut reached = 1;
    while let Some(at) = queue.pop_front() {
        for n in neighbors(at, rows, cols) {
            if on[id(n)] && !seen[id(n)] {
                seen[id(n)] = true;
                reached += 1;
                queue.push_back(n);
            }
        }
    }
    reached == on.iter().filter(|&&o| o).count()
}

/// Edges of a `k×k` grid graph: all horizontal edges row by row, then all
/// vertical edges row by row. Vertex ids are `r·k + c`.
pub fn grid_edges(k: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(2 * k * (k - 1));
    for r in 0..k {
        for c in 0..k - 1 {
            edges.push((r * k + c, r * k + c + 1));
        }
    }
    for r in 0..k - 1 {
        for c in 0..k {
            edges.push((r * k + c, (r + 1) * k + c));
        }
    }
    edges
}
