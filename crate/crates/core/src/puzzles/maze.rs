//! Grid mazes whose passage cells form a tree.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::grid::{neighbors, Cell};
use super::PuzzleError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MazePuzzle {
    pub size: usize,
    /// Row-major, `true` for a wall.
    pub walls: Vec<bool>,
    pub start: Cell,
    pub end: Cell,
}

impl MazePuzzle {
    pub fn new(size: usize, walls: Vec<bool>, start: Cell, end: Cell) -> Result<Self, PuzzleError> {
        if size < 2 || walls.len() != size * size {
            return Err(PuzzleError::InvalidPayload(format!(
                "maze of size {size} needs {} cells",
                size * size
            )));
        }
        for c in [start, end] {
            if c.0 >= size || c.1 >= size {
                return Err(PuzzleError::InvalidPayload(format!(
                    "endpoint {c:?} outside the grid"
                )));
            }
            if walls[c.0 * size + c.1] {
                return Err(PuzzleError::InvalidPayload(format!(
                    "endpoint {c:?} is a wall"
                )));
            }
        }
        if start == end {
            return Err(PuzzleError::InvalidPayload("start equals end".into()));
        }
        Ok(Self {
            size,
            walls,
            start,
            end,
        })
    }

    fn id(&self, c: Cell) -> usize {
        c.0 * self.size + c.1
    }

    pub fn is_passage(&self, c: Cell) -> bool {
        !self.walls[self.id(c)]
    }

    /// Every simple start→end path through passages, as cell-membership grids.
    pub fn solve(&self, cap: usize) -> Result<Vec<Vec<bool>>, PuzzleError> {
        let mut on = vec![false; self.size * self.size];
        let mut found = Vec::new();
        on[self.id(self.start)] = true;
        if self.dfs(self.start, &mut on, &mut found, cap) {
            return Err(PuzzleError::CapExceeded { cap });
        }
        Ok(found)
    }

    fn dfs(&self, at: Cell, on: &mut Vec<bool>, found: &mut Vec<Vec<bool>>, cap: usize) -> bool {
        if at == self.end {
            if found.len() == cap {
                return true;
            }
            found.push(on.clone());
            return false;
        }
        for nb in neighbors(at, self.size, self.size) {
            let id = self.id(nb);
            if self.walls[id] || on[id] {
                continue;
            }
            on[id] = true;
            let stop = self.dfs(nb, on, found, cap);
            on[id] = false;
            if stop {
                return true;
            }
        }
        false
    }

    /// Places this maze at `offset` inside a larger all-wall frame.
    pub fn embed(&self, frame: usize, offset: Cell) -> Result<MazePuzzle, PuzzleError> {
        if offset.0 + self.size > frame || offset.1 + self.size > frame {
            return Err(PuzzleError::InvalidPayload(format!(
                "maze of size {} does not fit a {frame} frame at {offset:?}",
                self.size
            )));
        }
        let mut walls = vec![true; frame * frame];
        for r in 0..self.size {
            for c in 0..self.size {
                walls[(r + offset.0) * frame + c + offset.1] = self.walls[r * self.size + c];
            }
        }
        let shift = |c: Cell| (c.0 + offset.0, c.1 + offset.1);
        MazePuzzle::new(frame, walls, shift(self.start), shift(self.end))
    }
}

/// Rule check: the marked cells are exactly a simple 4-connected path of
/// passages from start to end.
pub fn is_valid_path(p: &MazePuzzle, on: &[bool]) -> bool {
    if on.len() != p.walls.len() || !on[p.id(p.start)] || !on[p.id(p.end)] {
        return false;
    }
    if on.iter().zip(&p.walls).any(|(&o, &w)| o && w) {
        return false;
    }
    super::grid::is_simple_path(on, p.size, p.size, p.start, p.end)
}

/// Randomized depth-first carving: a wall cell becomes a passage only when its
/// sole passage neighbour is the cell being extended, so passages stay acyclic.
pub fn carve<R: Rng>(size: usize, rng: &mut R) -> Vec<bool> {
    let mut walls = vec![true; size * size];
    let root = (rng.random_range(0..size), rng.random_range(0..size));
    walls[root.0 * size + root.1] = false;
    let mut stack = vec![root];
    while let Some(&at) = stack.last() {
        let mut options: Vec<Cell> = neighbors(at, size, size)
            .into_iter()
            .filter(|&nb| {
                walls[nb.0 * size + nb.1]
                    && neighbors(nb, size, size)
                        .into_iter()
                        .all(|x| x == at || walls[x.0 * size + x.1])
            })
            .collect();
        if options.is_empty() {
            stack.pop();
            continue;
        }
        options.shuffle(rng);
        let next = options[0];
        walls[next.0 * size + next.1] = false;
        stack.push(next);
    }
    walls
}

pub fn generate<R: Rng>(size: usize, rng: &mut R) -> Result<(MazePuzzle, Vec<bool>), PuzzleError> {
    if size < 2 {
        return Err(PuzzleError::Infeasible(format!(
            "maze size {size} too small"
        )));
    }
    let walls = carve(size, rng);
    let passages: Vec<Cell> = (0..size * size)
        .filter(|&i| !walls[i])
        .map(|i| (i / size, i % size))
        .collect();
    if passages.len() < 2 {
        return Err(PuzzleError::Infeasible(
            "maze has a single passage cell".into(),
        ));
    }
    let picks: Vec<&Cell> = passages.choose_multiple(rng, 2).collect();
    let p = MazePuzzle::new(size, walls, *picks[0], *picks[1])?;
    let mut paths = p.solve(1)?;
    let path = paths
        .pop()
        .ok_or_else(|| PuzzleError::Infeasible("endpoints disconnected".into()))?;
    Ok((p, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn cycle_count(walls: &[bool], size: usize) -> isize {
        let mut edges = 0isize;
        let mut verts = 0isize;
        for r in 0..size {
            for c in 0..size {
                if walls[r * size + c] {
                    continue;
                }
                verts += 1;
                if c + 1 < size && !walls[r * size + c + 1] {
                    edges += 1;
                }
                if r + 1 < size && !walls[(r + 1) * size + c] {
                    edges += 1;
                }
            }
        }
        // passages are connected by construction, so one component
        edges - verts + 1
    }

    #[test]
    fn carved_passages_form_a_tree() {
        for seed in 0..50 {
            let mut rng = stream(seed, 0, 0, 0);
            let w = carve(5, &mut rng);
            assert_eq!(cycle_count(&w, 5), 0);
        }
    }

    #[test]
    fn generated_maze_has_exactly_one_path() {
        let mut rng = stream(1, 0, 0, 0);
        let (p, path) = generate(6, &mut rng).unwrap();
        let all = p.solve(16).unwrap();
        assert_eq!(all, vec![path.clone()]);
        assert!(is_valid_path(&p, &path));
    }

    #[test]
    fn moving_a_path_cell_onto_a_wall_fails() {
        let mut rng = stream(2, 0, 0, 0);
        let (p, path) = generate(6, &mut rng).unwrap();
        let wall = p.walls.iter().position(|&w| w).unwrap();
        let mid = (0..path.len())
            .find(|&i| path[i] && i != p.id(p.start) && i != p.id(p.end))
            .or_else(|| (0..path.len()).find(|&i| path[i] && i != p.id(p.start)))
            .unwrap();
        let mut bad = path.clone();
        bad[mid] = false;
        bad[wall] = true;
        assert!(!is_valid_path(&p, &bad));
    }

    #[test]
    fn invalid_payloads() {
        assert!(MazePuzzle::new(3, vec![false; 9], (0, 0), (0, 0)).is_err());
        let mut w = vec![false; 9];
        w[8] = true;
        assert!(MazePuzzle::new(3, w, (0, 0), (2, 2)).is_err());
    }

    #[test]
    fn embedding_preserves_solvability() {
        let mut rng = stream(4, 0, 0, 0);
        let (p, _) = generate(5, &mut rng).unwrap();
        let big = p.embed(10, (3, 2)).unwrap();
        assert_eq!(big.solve(4).unwrap().len(), 1);
    }
}
