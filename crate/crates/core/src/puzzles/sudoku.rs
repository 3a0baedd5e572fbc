//! Sudoku boards of side `b²` with `b×b` boxes.

use rand::seq::SliceRandom;
use rand::Rng;

use super::PuzzleError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SudokuPuzzle {
    pub box_size: usize,
    /// Row-major digits, `0` for a blank.
    pub cells: Vec<u8>,
}

impl SudokuPuzzle {
    pub fn new(box_size: usize, cells: Vec<u8>) -> Result<Self, PuzzleError> {
        if !(2..=4).contains(&box_size) {
            return Err(PuzzleError::InvalidPayload(format!(
                "unsupported box size {box_size}"
            )));
        }
        let side = box_size * box_size;
        if cells.len() != side * side {
            return Err(PuzzleError::InvalidPayload(format!(
                "expected {} cells, got {}",
                side * side,
                cells.len()
            )));
        }
        if let Some(&d) = cells.iter().find(|&&d| d as usize > side) {
            return Err(PuzzleError::InvalidPayload(format!(
                "digit {d} out of range 0..={side}"
            )));
        }
        let p = Self { box_size, cells };
        if !p.hints_consistent() {
            return Err(PuzzleError::InvalidPayload(
                "hints repeat within a unit".into(),
            ));
        }
        Ok(p)
    }

    pub fn side(&self) -> usize {
        self.box_size * self.box_size
    }

    pub fn hint_count(&self) -> usize {
        self.cells.iter().filter(|&&d| d != 0).count()
    }

    fn hints_consistent(&self) -> bool {
        let mut st = Candidates::new(self.box_size);
        for (i, &d) in self.cells.iter().enumerate() {
            if d != 0 {
                if st.allowed(i) & (1 << d) == 0 {
                    return false;
                }
                st.place(i, d);
            }
        }
        true
    }

    /// Enumerates completions in ascending digit order. Returns
    /// `Err(CapExceeded)` once more than `cap` solutions exist.
    pub fn solve(&self, cap: usize) -> Result<Vec<Vec<u8>>, PuzzleError> {
        let mut search = Search::<crate::rng::StreamRng>::new(self, None);
        search.cap = cap;
        search.run();
        if search.exceeded {
            Err(PuzzleError::CapExceeded { cap })
        } else {
            Ok(search.found)
        }
    }

    /// Number of completions, saturating at `limit + 1`.
    pub fn count_solutions(&self, limit: usize) -> usize {
        let mut search = Search::<crate::rng::StreamRng>::new(self, None);
        search.cap = limit;
        search.run();
        search.found.len() + usize::from(search.exceeded)
    }
}

/// Row/column/box digit bitmasks.
#[derive(Clone)]
struct Candidates {
    b: usize,
    side: usize,
    rows: Vec<u32>,
    cols: Vec<u32>,
    boxes: Vec<u32>,
}

impl Candidates {
    fn new(b: usize) -> Self {
        let side = b * b;
        Self {
            b,
            side,
            rows: vec![0; side],
            cols: vec![0; side],
            boxes: vec![0; side],
        }
    }

    fn unit(&self, i: usize) -> (usize, usize, usize) {
        let (r, c) = (i / self.side, i % self.side);
        (r, c, (r / self.b) * self.b + c / self.b)
    }

    fn full(&self) -> u32 {
        ((1u32 << (self.side + 1)) - 1) & !1
    }

    fn allowed(&self, i: usize) -> u32 {
        let (r, c, b) = self.unit(i);
        self.full() & !(self.rows[r] | self.cols[c] | self.boxes[b])
    }

    fn place(&mut self, i: usize, d: u8) {
        let (r, c, b) = self.unit(i);
        self.rows[r] |= 1 << d;
        self.cols[c] |= 1 << d;
        self.boxes[b] |= 1 << d;
    }

    fn remove(&mut self, i: usize, d: u8) {
        let (r, c, b) = self.unit(i);
        self.rows[r] &= !(1 << d);
        self.cols[c] &= !(1 << d);
        self.boxes[b] &= !(1 << d);
    }
}

struct Search<'r, R> {
    grid: Vec<u8>,
    cand: Candidates,
    cap: usize,
    found: Vec<Vec<u8>>,
    exceeded: bool,
    rng: Option<&'r mut R>,
}

impl<'r, R: Rng> Search<'r, R> {
    fn new(p: &SudokuPuzzle, rng: Option<&'r mut R>) -> Self {
        let mut cand = Candidates::new(p.box_size);
        for (i, &d) in p.cells.iter().enumerate() {
            if d != 0 {
                cand.place(i, d);
            }
        }
        Self {
            grid: p.cells.clone(),
            cand,
            cap: usize::MAX,
            found: Vec::new(),
            exceeded: false,
            rng,
        }
    }

    fn run(&mut self) {
        self.recurse();
    }

    /// Returns true when the search should stop.
    fn recurse(&mut self) -> bool {
        // most constrained blank cell
        let mut best: Option<(usize, u32)> = None;
        for i in 0..self.grid.len() {
            if self.grid[i] != 0 {
                continue;
            }
            let a = self.cand.allowed(i);
            if a == 0 {
                return false;
            }
            if best.is_none_or(|(_, b)| a.count_ones() < b.count_ones()) {
                best = Some((i, a));
                if a.count_ones() == 1 {
                    break;
                }
            }
        }
        let Some((cell, allowed)) = best else {
            if self.found.len() == self.cap {
                self.exceeded = true;
                return true;
            }
            self.found.push(self.grid.clone());
            return false;
        };
        let mut digits: Vec<u8> = (1..=self.cand.side as u8)
            .filter(|d| allowed & (1 << d) != 0)
            .collect();
        if let Some(rng) = self.rng.as_deref_mut() {
            digits.shuffle(rng);
        }
        for d in digits {
            self.grid[cell] = d;
            self.cand.place(cell, d);
            let stop = self.recurse();
            self.cand.remove(cell, d);
            self.grid[cell] = 0;
            if stop {
                return true;
            }
        }
        false
    }
}

/// A uniformly shuffled complete grid.
pub fn random_grid<R: Rng>(box_size: usize, rng: &mut R) -> Vec<u8> {
    let side = box_size * box_size;
    let empty = SudokuPuzzle {
        box_size,
        cells: vec![0; side * side],
    };
    let mut search = Search::new(&empty, Some(rng));
    search.cap = 1;
    search.run();
    search.found.pop().expect("empty board is solvable")
}

/// Rule check of a complete grid against the puzzle's hints.
pub fn is_valid_completion(p: &SudokuPuzzle, grid: &[u8]) -> bool {
    let side = p.side();
    if grid.len() != side * side || grid.iter().any(|&d| d == 0 || d as usize > side) {
        return false;
    }
    if p.cells.iter().zip(grid).any(|(&h, &g)| h != 0 && h != g) {
        return false;
    }
    let mut cand = Candidates::new(p.box_size);
    for (i, &d) in grid.iter().enumerate() {
        if cand.allowed(i) & (1 << d) == 0 {
            return false;
        }
        cand.place(i, d);
    }
    true
}

/// Deletes cells from a random complete grid until `hints` remain.
///
/// In unique mode every deletion must preserve a single completion; otherwise
/// the final board must admit between 2 and `cap` completions.
pub fn generate<R: Rng>(
    box_size: usize,
    hints: usize,
    unique: bool,
    cap: usize,
    rng: &mut R,
) -> Result<(SudokuPuzzle, Vec<u8>), PuzzleError> {
    let side = box_size * box_size;
    if hints > side * side {
        return Err(PuzzleError::Infeasible(format!(
            "{hints} hints exceed board size"
        )));
    }
    const ATTEMPTS: usize = 64;
    for _ in 0..ATTEMPTS {
        let solution = random_grid(box_size, rng);
        let mut order: Vec<usize> = (0..side * side).collect();
        order.shuffle(rng);
        let mut p = SudokuPuzzle {
            box_size,
            cells: solution.clone(),
        };
        let mut remaining = side * side;
        for &cell in &order {
            if remaining == hints {
                break;
            }
            let d = p.cells[cell];
            p.cells[cell] = 0;
            if unique && p.count_solutions(1) > 1 {
                p.cells[cell] = d;
            } else {
                remaining -= 1;
            }
        }
        if remaining != hints {
            continue;
        }
        if !unique {
            let n = p.count_solutions(cap);
            if n < 2 || n > cap {
                continue;
            }
        }
        return Ok((p, solution));
    }
    Err(PuzzleError::Infeasible(format!(
        "no {} board with {hints} hints found in {ATTEMPTS} attempts",
        if unique {
            "unique"
        } else {
            "multiple-solution"
        }
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn empty_4x4_board_has_288_completions() {
        let p = SudokuPuzzle::new(2, vec![0; 16]).unwrap();
        assert_eq!(p.solve(1000).unwrap().len(), 288);
        assert!(matches!(
            p.solve(16),
            Err(PuzzleError::CapExceeded { cap: 16 })
        ));
        assert_eq!(p.count_solutions(16), 17);
    }

    #[test]
    fn rejects_bad_payloads() {
        assert!(SudokuPuzzle::new(2, vec![5; 16]).is_err());
        assert!(SudokuPuzzle::new(2, vec![0; 15]).is_err());
        let mut cells = vec![0; 16];
        cells[0] = 1;
        cells[1] = 1;
        assert!(SudokuPuzzle::new(2, cells).is_err());
    }

    #[test]
    fn random_grid_is_valid() {
        let mut rng = stream(3, 0, 0, 0);
        for b in [2, 3] {
            let g = random_grid(b, &mut rng);
            let p = SudokuPuzzle::new(b, vec![0; g.len()]).unwrap();
            assert!(is_valid_completion(&p, &g));
        }
    }

    #[test]
    fn unique_generation_has_one_solution() {
        let mut rng = stream(11, 0, 0, 0);
        let (p, sol) = generate(3, 36, true, 16, &mut rng).unwrap();
        assert_eq!(p.hint_count(), 36);
        assert_eq!(p.solve(16).unwrap(), vec![sol]);
    }

    #[test]
    fn multiple_generation_has_several_solutions() {
        let mut rng = stream(5, 0, 0, 0);
        let (p, sol) = generate(2, 5, false, 16, &mut rng).unwrap();
        let all = p.solve(16).unwrap();
        assert!(all.len() >= 2);
        assert!(all.contains(&sol));
    }

    #[test]
    fn impossible_hint_targets_are_infeasible() {
        let mut rng = stream(5, 0, 0, 0);
        // No 4x4 board with a single hint has a unique completion.
        assert!(matches!(
            generate(2, 1, true, 16, &mut rng),
            Err(PuzzleError::Infeasible(_))
        ));
    }
}
