//! Standalone verification of solution files against a dataset.

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::read_file;
use super::HarnessError;
use crate::puzzles::{io, PuzzleError, PuzzleInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckOutcome {
    /// Position of the instance in the dataset, from 0.
    pub index: usize,
    /// 1-based line of the solution file.
    pub line: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    pub total: usize,
    pub passed: usize,
    pub results: Vec<CheckOutcome>,
}

impl CheckReport {
    pub fn all_pass(&self) -> bool {
        self.passed == self.total
    }
}

/// Checks each non-blank solution line against the instance at the same
/// position, using the instance's reward rule (rules when several solutions
/// exist, ground truth otherwise).
pub fn check_solutions<R: BufRead>(
    puzzles: &[PuzzleInstance],
    solutions: R,
) -> Result<CheckReport, HarnessError> {
    let mut results = Vec::new();
    for (n, line) in solutions.lines().enumerate() {
        let line = line.map_err(PuzzleError::from)?;
        if line.trim().is_empty() {
            continue;
        }
        let index = results.len();
        let parse = |msg: String| PuzzleError::Parse { line: n + 1, msg };
        let p = puzzles.get(index).ok_or_else(|| {
            parse(format!(
                "more solutions than the {} dataset instances",
                puzzles.len()
            ))
        })?;
        let sol = io::parse_solution(p, line.trim()).map_err(|e| parse(e.to_string()))?;
        let pass = p
            .check(&sol, p.reward_mode())
            .map_err(|e| parse(e.to_string()))?;
        results.push(CheckOutcome {
            index,
            line: n + 1,
            pass,
        });
    }
    if results.len() != puzzles.len() {
        return Err(HarnessError::Mismatch(format!(
            "{} solutions for {} dataset instances",
            results.len(),
            puzzles.len()
        )));
    }
    Ok(CheckReport {
        total: results.len(),
        passed: results.iter().filter(|r| r.pass).count(),
        results,
    })
}

pub fn check_files(dataset: &Path, solutions: &Path) -> Result<CheckReport, HarnessError> {
    let puzzles = read_file(dataset)?;
    let f = std::fs::File::open(solutions).map_err(HarnessError::io(solutions))?;
    check_solutions(&puzzles, BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::puzzles::{generate, GenOptions, Task};
    use crate::rng::stream;

    fn set() -> Vec<PuzzleInstance> {
        (0..4)
            .map(|i| {
                generate(
                    Task::Sudoku,
                    4,
                    &GenOptions::default(),
                    i,
                    &mut stream(2, 1, i, 0),
                )
                .unwrap()
            })
            .collect()
    }

    fn lines(ps: &[PuzzleInstance]) -> Vec<String> {
        ps.iter()
            .map(|p| io::format_solution(p, p.ground_truth.as_ref().unwrap()))
            .collect()
    }

    #[test]
    fn oracle_solutions_pass_and_corruption_is_located() {
        let ps = set();
        let mut ls = lines(&ps);
        let r = check_solutions(&ps, ls.join("\n").as_bytes()).unwrap();
        assert!(r.all_pass() && r.total == 4);

        let first = ls[2].as_bytes()[0];
        let swapped = if first == b'1' { '2' } else { '1' };
        ls[2].replace_range(0..1, &swapped.to_string());
        let r = check_solutions(&ps, ls.join("\n").as_bytes()).unwrap();
        assert_eq!(r.passed, 3);
        assert_eq!(
            r.results
                .iter()
                .find(|o| !o.pass)
                .map(|o| (o.index, o.line)),
            Some((2, 3))
        );
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let ps = set();
        let mut ls = lines(&ps);
        ls[1] = "12x4".into();
        match check_solutions(&ps, ls.join("\n").as_bytes()) {
            Err(HarnessError::Puzzle(PuzzleError::Parse { line, .. })) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_input_gives_an_empty_report() {
        let r = check_solutions(&[], &b""[..]).unwrap();
        assert_eq!((r.total, r.passed), (0, 0));
    }
}
