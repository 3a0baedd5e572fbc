//! Dataset text formats.
//!
//! Sudoku files hold one board per line: `side²` characters (`0` blank,
//! `1`-`9`, then `A`-`G` for 10-16), optionally followed by a comma and the
//! solved board. Every other task uses one JSON object per line:
//!
//! ```text
//! {"task":"maze","size":5,"walls":[[1,0,..],..],"start":[0,1],"end":[4,3],"solution":[[0,1,..],..]}
//! {"task":"simple_path","size":4,"removed_edges":[[[0,0],[0,1]]],"start":[0,0],"end":[3,3],"solution":[[[0,0],[1,0]],..]}
//! {"task":"preference","size":10,"given_ranks":[3,1,0,..],"solution":[3,1,7,..]}
//! {"task":"min_cost_path","size":5,"costs":[[4,1,..],..],"solution":[[1,1,0,..],..]}
//! ```
//!
//! Solution files for the checker carry one solution per line in the same
//! notation as the `solution` field (a bare board string for Sudoku).

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::grid::{grid_edges, Cell};
use super::{
    DiscreteSolution, MazePuzzle, MinCostPuzzle, PathPuzzle, Payload, PreferencePuzzle,
    PuzzleError, PuzzleInstance, SudokuPuzzle, Task,
};

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    task: Task,
    size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    walls: Option<Vec<Vec<u8>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    removed_edges: Option<Vec<[[usize; 2]; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    given_ranks: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    costs: Option<Vec<Vec<u32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    end: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    solution: Option<Value>,
}

fn bad(msg: impl Into<String>) -> PuzzleError {
    PuzzleError::InvalidPayload(msg.into())
}

fn digit_char(d: u8) -> char {
    match d {
        0..=9 => (b'0' + d) as char,
        _ => (b'A' + d - 10) as char,
    }
}

fn char_digit(c: char) -> Result<u8, PuzzleError> {
    match c {
        '0'..='9' => Ok(c as u8 - b'0'),
        'A'..='G' => Ok(c as u8 - b'A' + 10),
        '.' => Ok(0),
        _ => Err(bad(format!("unexpected character {c:?}"))),
    }
}

fn parse_board(s: &str) -> Result<(usize, Vec<u8>), PuzzleError> {
    let cells: Vec<u8> = s.trim().chars().map(char_digit).collect::<Result<_, _>>()?;
    let b = (cells.len() as f64).sqrt().sqrt().round() as usize;
    if b * b * b * b != cells.len() {
        return Err(bad(format!(
            "{} characters is not a square board",
            cells.len()
        )));
    }
    Ok((b, cells))
}

fn board_string(cells: &[u8]) -> String {
    cells.iter().map(|&d| digit_char(d)).collect()
}

fn grid_of<T: Copy>(rows: &[Vec<T>], size: usize, what: &str) -> Result<Vec<T>, PuzzleError> {
    if rows.len() != size || rows.iter().any(|r| r.len() != size) {
        return Err(bad(format!("{what} must be a {size}x{size} grid")));
    }
    Ok(rows.iter().flatten().copied().collect())
}

fn rows_of<T: Copy>(flat: &[T], size: usize) -> Vec<Vec<T>> {
    flat.chunks(size).map(<[T]>::to_vec).collect()
}

fn cell(c: Option<[usize; 2]>, what: &str) -> Result<Cell, PuzzleError> {
    c.map(|[r, c]| (r, c))
        .ok_or_else(|| bad(format!("missing {what}")))
}

fn edge_index(size: usize, pair: [[usize; 2]; 2]) -> Result<usize, PuzzleError> {
    let [a, b] = pair.map(|[r, c]| r * size + c);
    let (a, b) = (a.min(b), a.max(b));
    grid_edges(size)
        .iter()
        .position(|&e| e == (a, b))
        .ok_or_else(|| bad(format!("{pair:?} is not a grid edge")))
}

fn edge_pairs(size: usize, chosen: &[bool]) -> Vec<[[usize; 2]; 2]> {
    grid_edges(size)
        .into_iter()
        .zip(chosen)
        .filter(|(_, &c)| c)
        .map(|((a, b), _)| [[a / size, a % size], [b / size, b % size]])
        .collect()
}

/// Decodes a solution in the notation of `task`.
pub fn solution_from_value(payload: &Payload, v: &Value) -> Result<DiscreteSolution, PuzzleError> {
    let de = |e: serde_json::Error| bad(e.to_string());
    Ok(match payload {
        Payload::Sudoku(_) => {
            let s = v
                .as_str()
                .ok_or_else(|| bad("Sudoku solution must be a string"))?;
            DiscreteSolution::Digits(parse_board(s)?.1)
        }
        Payload::Maze(MazePuzzle { size, .. }) | Payload::MinCost(MinCostPuzzle { size, .. }) => {
            let rows: Vec<Vec<u8>> = serde_json::from_value(v.clone()).map_err(de)?;
            let flat = grid_of(&rows, *size, "solution")?;
            if flat.iter().any(|&x| x > 1) {
                return Err(bad("solution grid must be 0/1"));
            }
            DiscreteSolution::Cells(flat.into_iter().map(|x| x == 1).collect())
        }
        Payload::SimplePath(p) => {
            let pairs: Vec<[[usize; 2]; 2]> = serde_json::from_value(v.clone()).map_err(de)?;
            let mut chosen = vec![false; p.n_edges()];
            for pair in pairs {
                chosen[edge_index(p.size, pair)?] = true;
            }
            DiscreteSolution::Edges(chosen)
        }
        Payload::Preference(_) => {
            DiscreteSolution::Ranks(serde_json::from_value(v.clone()).map_err(de)?)
        }
    })
}

pub fn solution_to_value(payload: &Payload, sol: &DiscreteSolution) -> Value {
    match (payload, sol) {
        (Payload::Sudoku(_), DiscreteSolution::Digits(d)) => Value::String(board_string(d)),
        (Payload::Maze(MazePuzzle { size, .. }), DiscreteSolution::Cells(on))
        | (Payload::MinCost(MinCostPuzzle { size, .. }), DiscreteSolution::Cells(on)) => {
            let flat: Vec<u8> = on.iter().map(|&o| u8::from(o)).collect();
            serde_json::json!(rows_of(&flat, *size))
        }
        (Payload::SimplePath(p), DiscreteSolution::Edges(e)) => {
            serde_json::json!(edge_pairs(p.size, e))
        }
        (Payload::Preference(_), DiscreteSolution::Ranks(r)) => serde_json::json!(r),
        _ => Value::Null,
    }
}

/// One solution line as written by [`format_solution`].
pub fn parse_solution(p: &PuzzleInstance, line: &str) -> Result<DiscreteSolution, PuzzleError> {
    let sol = match &p.payload {
        Payload::Sudoku(_) => DiscreteSolution::Digits(parse_board(line)?.1),
        payload => {
            let v: Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            solution_from_value(payload, &v)?
        }
    };
    Ok(sol)
}

pub fn format_solution(p: &PuzzleInstance, sol: &DiscreteSolution) -> String {
    match (&p.payload, sol) {
        (Payload::Sudoku(_), DiscreteSolution::Digits(d)) => board_string(d),
        (payload, sol) => solution_to_value(payload, sol).to_string(),
    }
}

/// Parses one dataset line into an instance with the given id.
pub fn parse_instance(line: &str, idx: u64) -> Result<PuzzleInstance, PuzzleError> {
    let line = line.trim();
    if !line.starts_with('{') {
        let (board, solution) = match line.split_once(',') {
            Some((a, b)) => (a, Some(b)),
            None => (line, None),
        };
        let (b, cells) = parse_board(board)?;
        let gt = solution
            .map(parse_board)
            .transpose()?
            .map(|(_, s)| DiscreteSolution::Digits(s));
        return PuzzleInstance::new(idx, Payload::Sudoku(SudokuPuzzle::new(b, cells)?), gt);
    }
    let r: Record = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
    let k = r.size;
    let payload = match r.task {
        Task::Sudoku => return Err(bad("Sudoku boards use the plain digit-string format")),
        Task::Maze => {
            let walls = grid_of(
                r.walls.as_deref().ok_or_else(|| bad("missing walls"))?,
                k,
                "walls",
            )?;
            let walls = walls.into_iter().map(|w| w != 0).collect();
            Payload::Maze(MazePuzzle::new(
                k,
                walls,
                cell(r.start, "start")?,
                cell(r.end, "end")?,
            )?)
        }
        Task::SimplePath => {
            if k < 2 {
                return Err(bad(format!("grid size {k} too small")));
            }
            let mut removed = vec![false; 2 * k * (k - 1)];
            for pair in r.removed_edges.unwrap_or_default() {
                removed[edge_index(k, pair)?] = true;
            }
            let (s, t) = (cell(r.start, "start")?, cell(r.end, "end")?);
            if s.0 >= k || s.1 >= k || t.0 >= k || t.1 >= k {
                return Err(bad("endpoint outside the grid"));
            }
            Payload::SimplePath(PathPuzzle::new(k, removed, s.0 * k + s.1, t.0 * k + t.1)?)
        }
        Task::Preference => {
            let given = r.given_ranks.ok_or_else(|| bad("missing given_ranks"))?;
            if given.len() != k {
                return Err(bad(format!("expected {k} ranks")));
            }
            Payload::Preference(PreferencePuzzle::new(
                given.into_iter().map(|g| (g != 0).then_some(g)).collect(),
            )?)
        }
        Task::MinCostPath => {
            let costs = grid_of(
                r.costs.as_deref().ok_or_else(|| bad("missing costs"))?,
                k,
                "costs",
            )?;
            Payload::MinCost(MinCostPuzzle::new(k, costs)?)
        }
    };
    let gt = r
        .solution
        .as_ref()
        .map(|v| solution_from_value(&payload, v))
        .transpose()?;
    PuzzleInstance::new(idx, payload, gt)
}

pub fn format_instance(p: &PuzzleInstance) -> String {
    let gt = p.ground_truth.as_ref();
    let mut r = Record {
        task: p.task(),
        size: p.size(),
        walls: None,
        removed_edges: None,
        given_ranks: None,
        costs: None,
        start: None,
        end: None,
        solution: gt.map(|s| solution_to_value(&p.payload, s)),
    };
    match &p.payload {
        Payload::Sudoku(s) => {
            let mut line = board_string(&s.cells);
            if let Some(DiscreteSolution::Digits(d)) = gt {
                line.push(',');
                line.push_str(&board_string(d));
            }
            return line;
        }
        Payload::Maze(m) => {
            let flat: Vec<u8> = m.walls.iter().map(|&w| u8::from(w)).collect();
            r.walls = Some(rows_of(&flat, m.size));
            r.start = Some([m.start.0, m.start.1]);
            r.end = Some([m.end.0, m.end.1]);
        }
        Payload::SimplePath(g) => {
            r.removed_edges = Some(edge_pairs(g.size, &g.removed));
            r.start = Some([g.source / g.size, g.source % g.size]);
            r.end = Some([g.target / g.size, g.target % g.size]);
        }
        Payload::Preference(pr) => {
            r.given_ranks = Some(pr.given.iter().map(|g| g.unwrap_or(0)).collect());
        }
        Payload::MinCost(mc) => {
            r.costs = Some(rows_of(&mc.costs, mc.size));
            r.start = Some([0, 0]);
            r.end = Some([mc.size - 1, mc.size - 1]);
        }
    }
    serde_json::to_string(&r).expect("record serializes")
}

/// Reads every non-blank line; ids are assigned in file order from 0.
pub fn read_instances<R: BufRead>(reader: R) -> Result<Vec<PuzzleInstance>, PuzzleError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p = parse_instance(&line, out.len() as u64).map_err(|e| PuzzleError::Parse {
            line: n + 1,
            msg: e.to_string(),
        })?;
        out.push(p);
    }
    Ok(out)
}

pub fn write_instances<W: Write>(mut w: W, puzzles: &[PuzzleInstance]) -> Result<(), PuzzleError> {
    for p in puzzles {
        writeln!(w, "{}", format_instance(p))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::puzzles::{generate, GenOptions};
    use crate::rng::stream;

    #[test]
    fn every_task_round_trips_through_text() {
        let opts = GenOptions::default();
        for (task, size) in [
            (Task::Sudoku, 4),
            (Task::Sudoku, 9),
            (Task::Maze, 5),
            (Task::SimplePath, 4),
            (Task::Preference, 10),
            (Task::MinCostPath, 4),
        ] {
            let ps: Vec<_> = (0..3)
                .map(|i| generate(task, size, &opts, i, &mut stream(i, 0, 1, 0)).unwrap())
                .collect();
            let mut buf = Vec::new();
            write_instances(&mut buf, &ps).unwrap();
            let back = read_instances(buf.as_slice()).unwrap();
            for (a, b) in ps.iter().zip(&back) {
                assert_eq!(a.payload, b.payload, "{task}");
                assert_eq!(a.ground_truth, b.ground_truth, "{task}");
                assert_eq!(a.idx, b.idx);
                let gt = a.ground_truth.as_ref().unwrap();
                assert_eq!(&parse_solution(a, &format_solution(a, gt)).unwrap(), gt);
            }
        }
    }

    #[test]
    fn malformed_lines_report_their_number() {
        let text = "1200340000000000\n\n12003400000000x0\n";
        match read_instances(text.as_bytes()) {
            Err(PuzzleError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inconsistent_ground_truth_is_rejected() {
        assert!(parse_instance("1200340000000000,1234341221434321", 0).is_ok());
        assert!(parse_instance("1200340000000000,1234341221434312", 0).is_err());
    }
}
