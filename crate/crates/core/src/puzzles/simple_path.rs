//! Shortest unweighted paths in a grid graph with some edges removed.

use std::collections::VecDeque;

use rand::Rng;

use super::grid::grid_edges;
use super::PuzzleError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathPuzzle {
    pub size: usize,
    /// Indexed like [`grid_edges`].
    pub removed: Vec<bool>,
    pub source: usize,
    pub target: usize,
}

impl PathPuzzle {
    pub fn new(
        size: usize,
        removed: Vec<bool>,
        source: usize,
        target: usize,
    ) -> Result<Self, PuzzleError> {
        if size < 2 {
            return Err(PuzzleError::InvalidPayload(format!(
                "grid size {size} too small"
            )));
        }
        let n_edges = 2 * size * (size - 1);
        if removed.len() != n_edges {
            return Err(PuzzleError::InvalidPayload(format!(
                "expected {n_edges} edge flags"
            )));
        }
        let n_vertices = size * size;
        if source >= n_vertices || target >= n_vertices {
            return Err(PuzzleError::InvalidPayload(
                "endpoint outside the grid".into(),
            ));
        }
        if source == target {
            return Err(PuzzleError::InvalidPayload("source equals target".into()));
        }
        Ok(Self {
            size,
            removed,
            source,
            target,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.size * self.size
    }

    pub fn n_edges(&self) -> usize {
        self.removed.len()
    }

    /// `(neighbour, edge index)` lists of the surviving subgraph.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.n_vertices()];
        for (e, (a, b)) in grid_edges(self.size).into_iter().enumerate() {
            if !self.removed[e] {
                adj[a].push((b, e));
                adj[b].push((a, e));
            }
        }
        adj
    }

    fn bfs(&self, from: usize) -> Vec<Option<usize>> {
        let adj = self.adjacency();
        let mut dist = vec![None; self.n_vertices()];
        dist[from] = Some(0);
        let mut q = VecDeque::from([from]);
        while let Some(v) = q.pop_front() {
            let d = dist[v].unwrap();
            for &(u, _) in &adj[v] {
                if dist[u].is_none() {
                    dist[u] = Some(d + 1);
                    q.push_back(u);
                }
            }
        }
        dist
    }

    pub fn shortest_distance(&self) -> Option<usize> {
        self.bfs(self.source)[self.target]
    }

    /// All shortest source→target paths as edge-indicator vectors.
    pub fn solve(&self, cap: usize) -> Result<Vec<Vec<bool>>, PuzzleError> {
        let from_target = self.bfs(self.target);
        let Some(total) = from_target[self.source] else {
            return Ok(Vec::new());
        };
        let adj = self.adjacency();
        let mut found = Vec::new();
        let mut chosen = vec![false; self.n_edges()];
        // walk forward along edges that strictly decrease distance-to-target
        fn walk(
            v: usize,
            target: usize,
            adj: &[Vec<(usize, usize)>],
            dist: &[Option<usize>],
            chosen: &mut Vec<bool>,
            found: &mut Vec<Vec<bool>>,
            cap: usize,
        ) -> bool {
            if v == target {
                if found.len() == cap {
                    return true;
                }
                found.push(chosen.clone());
                return false;
            }
            let d = dist[v].unwrap();
            for &(u, e) in &adj[v] {
                if dist[u] == Some(d - 1) {
                    chosen[e] = true;
                    let stop = walk(u, target, adj, dist, chosen, found, cap);
                    chosen[e] = false;
                    if stop {
                        return true;
                    }
                }
            }
            false
        }
        debug_assert!(total > 0);
        if walk(
            self.source,
            self.target,
            &adj,
            &from_target,
            &mut chosen,
            &mut found,
            cap,
        ) {
            return Err(PuzzleError::CapExceeded { cap });
        }
        Ok(found)
    }
}

/// Rule check: selected edges survive removal, form one simple
/// source→target path, and its length equals the BFS distance.
pub fn is_valid_path(p: &PathPuzzle, chosen: &[bool]) -> bool {
    if chosen.len() != p.n_edges() || chosen.iter().zip(&p.removed).any(|(&c, &r)| c && r) {
        return false;
    }
    let Some(dist) = p.shortest_distance() else {
        return false;
    };
    let edges = grid_edges(p.size);
    let mut deg = vec![0usize; p.n_vertices()];
    let mut adj = vec![Vec::new(); p.n_vertices()];
    let mut count = 0;
    for (e, &(a, b)) in edges.iter().enumerate() {
        if chosen[e] {
            deg[a] += 1;
            deg[b] += 1;
            adj[a].push(b);
            adj[b].push(a);
            count += 1;
        }
    }
    if count != dist {
        return false;
    }
    for (v, &d) in deg.iter().enumerate() {
        let want_end = v == p.source || v == p.target;
        if (want_end && d != 1) || (!want_end && d != 0 && d != 2) {
            return false;
        }
    }
    // connected from the source, covering every used vertex
    let mut seen = vec![false; p.n_vertices()];
    let mut stack = vec![p.source];
    seen[p.source] = true;
    while let Some(v) = stack.pop() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    deg.iter().enumerate().all(|(v, &d)| d == 0 || seen[v])
}

pub fn generate<R: Rng>(
    size: usize,
    removal_prob: f64,
    rng: &mut R,
) -> Result<(PathPuzzle, Vec<bool>), PuzzleError> {
    if !(0.0..1.0).contains(&removal_prob) {
        return Err(PuzzleError::Infeasible(format!(
            "edge removal probability {removal_prob}"
        )));
    }
    let n_edges = 2 * size * (size - 1);
    for _ in 0..256 {
        let removed: Vec<bool> = (0..n_edges)
            .map(|_| rng.random_bool(removal_prob))
            .collect();
        let source = rng.random_range(0..size * size);
        let target = rng.random_range(0..size * size);
        if source == target {
            continue;
        }
        let p = PathPuzzle::new(size, removed, source, target)?;
        // ties resolve to the first path in enumeration order
        if let Some(first) = p.solve(usize::MAX)?.into_iter().next() {
            return Ok((p, first));
        }
    }
    Err(PuzzleError::Infeasible(
        "could not draw a connected source/target pair".into(),
    ))
}
