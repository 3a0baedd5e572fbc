//! Puzzle tasks: generators, exact oracles, tensor encodings with hint
//! masks, discretization and constraint checks.

pub mod grid;
pub mod io;
pub mod maze;
pub mod metrics;
pub mod min_cost;
pub mod preference;
pub mod simple_path;
pub mod sudoku;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Tensor, TensorError};

pub use maze::MazePuzzle;
pub use metrics::{metrics, MetricsReport};
pub use min_cost::MinCostPuzzle;
pub use preference::PreferencePuzzle;
pub use simple_path::PathPuzzle;
pub use sudoku::SudokuPuzzle;

pub const DEFAULT_ORACLE_CAP: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum PuzzleError {
    #[error("invalid puzzle payload: {0}")]
    InvalidPayload(String),
    #[error("more than {cap} solutions")]
    CapExceeded { cap: usize },
    #[error("infeasible generation request: {0}")]
    Infeasible(String),
    #[error("instance {0} has no ground truth")]
    MissingGroundTruth(u64),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("empty prediction set")]
    EmptySet,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Sudoku,
    Maze,
    SimplePath,
    Preference,
    #[serde(alias = "min_cost")]
    MinCostPath,
}

impl Task {
    pub const ALL: [Task; 5] = [
        Task::Sudoku,
        Task::Maze,
        Task::SimplePath,
        Task::Preference,
        Task::MinCostPath,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Sudoku => "sudoku",
            Task::Maze => "maze",
            Task::SimplePath => "simple_path",
            Task::Preference => "preference",
            Task::MinCostPath => "min_cost_path",
        }
    }

    /// Channel count of the encoding, which the denoiser's input width must match.
    pub fn channels(self, size: usize) -> usize {
        match self {
            Task::Sudoku => size,
            Task::Maze | Task::MinCostPath => 2,
            Task::SimplePath => 1,
            Task::Preference => size,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = PuzzleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min_cost" => Ok(Task::MinCostPath),
            _ => Task::ALL
                .into_iter()
                .find(|t| t.name() == s)
                .ok_or_else(|| PuzzleError::InvalidPayload(format!("unknown task {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Sudoku(SudokuPuzzle),
    Maze(MazePuzzle),
    SimplePath(PathPuzzle),
    Preference(PreferencePuzzle),
    MinCost(MinCostPuzzle),
}

impl Payload {
    pub fn task(&self) -> Task {
        match self {
            Payload::Sudoku(_) => Task::Sudoku,
            Payload::Maze(_) => Task::Maze,
            Payload::SimplePath(_) => Task::SimplePath,
            Payload::Preference(_) => Task::Preference,
            Payload::MinCost(_) => Task::MinCostPath,
        }
    }

    /// The task's size parameter: board side, maze side, grid side, item count.
    pub fn size(&self) -> usize {
        match self {
            Payload::Sudoku(p) => p.side(),
            Payload::Maze(p) => p.size,
            Payload::SimplePath(p) => p.size,
            Payload::Preference(p) => p.n_items(),
            Payload::MinCost(p) => p.size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DiscreteSolution {
    /// Sudoku digits, row-major.
    Digits(Vec<u8>),
    /// Cell-on-path grid for mazes and min-cost paths, row-major.
    Cells(Vec<bool>),
    /// Edge indicators in grid edge order.
    Edges(Vec<bool>),
    /// Rank (1-based) of each item.
    Ranks(Vec<u8>),
}

impl DiscreteSolution {
    pub fn len(&self) -> usize {
        match self {
            DiscreteSolution::Digits(v) | DiscreteSolution::Ranks(v) => v.len(),
            DiscreteSolution::Cells(v) | DiscreteSolution::Edges(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Site-wise agreement.
    pub fn site_eq(&self, other: &DiscreteSolution, i: usize) -> bool {
        match (self, other) {
            (DiscreteSolution::Digits(a), DiscreteSolution::Digits(b))
            | (DiscreteSolution::Ranks(a), DiscreteSolution::Ranks(b)) => a[i] == b[i],
            (DiscreteSolution::Cells(a), DiscreteSolution::Cells(b))
            | (DiscreteSolution::Edges(a), DiscreteSolution::Edges(b)) => a[i] == b[i],
            _ => false,
        }
    }
}

/// How a prediction is judged: equality with the stored ground truth, or the
/// task's constraint rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMode {
    GroundTruth,
    Rules,
}

/// Generation knobs; fields irrelevant to a task are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenOptions {
    /// Sudoku hint count; `None` picks half the board.
    pub hints: Option<usize>,
    /// Sudoku: require a unique completion (otherwise 2..=cap completions).
    pub unique: bool,
    pub edge_removal: f64,
    pub given_items: usize,
    pub preference_noise: f64,
    pub cost_range: (u32, u32),
    pub oracle_cap: usize,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            hints: None,
            unique: true,
            edge_removal: 0.2,
            given_items: 6,
            preference_noise: 1.0,
            cost_range: (1, 9),
            oracle_cap: DEFAULT_ORACLE_CAP,
        }
    }
}

/// An encoded puzzle: hint tensor `c`, binary `mask`, payload and optional
/// ground truth.
#[derive(Debug, Clone)]
pub struct PuzzleInstance {
    pub idx: u64,
    pub payload: Payload,
    pub c: Tensor<f64>,
    pub mask: Tensor<f64>,
    pub ground_truth: Option<DiscreteSolution>,
    /// Admits more than one rule-consistent solution.
    pub multiple: bool,
}

impl PuzzleInstance {
    /// Encodes `payload`. A supplied ground truth must pass the rule check.
    pub fn new(
        idx: u64,
        payload: Payload,
        ground_truth: Option<DiscreteSolution>,
    ) -> Result<Self, PuzzleError> {
        let (c, mask) = encode(&payload)?;
        let multiple = match &payload {
            Payload::Sudoku(p) => p.count_solutions(1) > 1,
            Payload::MinCost(p) => !matches!(p.solve(1), Ok(v) if v.len() == 1),
            _ => false,
        };
        let inst = Self {
            idx,
            payload,
            c,
            mask,
            ground_truth: None,
            multiple,
        };
        if let Some(gt) = &ground_truth {
            inst.check_shape(gt)?;
            if !inst.is_consistent(gt) {
                return Err(PuzzleError::InvalidPayload(format!(
                    "instance {idx}: ground truth violates the constraints"
                )));
            }
        }
        Ok(Self {
            ground_truth,
            ..inst
        })
    }

    pub fn task(&self) -> Task {
        self.payload.task()
    }

    pub fn size(&self) -> usize {
        self.payload.size()
    }

    pub fn shape(&self) -> &[usize] {
        self.c.shape()
    }

    /// Mode used to assign RL rewards: rule checks where several valid
    /// answers exist (min-cost, multi-solution Sudoku), ground truth otherwise.
    pub fn reward_mode(&self) -> CheckMode {
        match self.payload {
            Payload::MinCost(_) => CheckMode::Rules,
            Payload::Sudoku(_) if self.multiple => CheckMode::Rules,
            _ => CheckMode::GroundTruth,
        }
    }

    fn check_shape(&self, sol: &DiscreteSolution) -> Result<(), PuzzleError> {
        let want = match (&self.payload, sol) {
            (Payload::Sudoku(p), DiscreteSolution::Digits(_)) => p.cells.len(),
            (Payload::Maze(p), DiscreteSolution::Cells(_)) => p.walls.len(),
            (Payload::SimplePath(p), DiscreteSolution::Edges(_)) => p.n_edges(),
            (Payload::Preference(p), DiscreteSolution::Ranks(_)) => p.n_items(),
            (Payload::MinCost(p), DiscreteSolution::Cells(_)) => p.costs.len(),
            _ => {
                return Err(PuzzleError::ShapeMismatch(format!(
                    "{} solution kind does not fit a {} instance",
                    kind_name(sol),
                    self.task()
                )))
            }
        };
        if sol.len() != want {
            return Err(PuzzleError::ShapeMismatch(format!(
                "expected {want} sites, got {}",
                sol.len()
            )));
        }
        Ok(())
    }

    /// Per-site argmax (one-hot tasks) or `> 0.5` threshold (binary tasks);
    /// hint sites always reproduce their observation.
    pub fn discretize(&self, x0: &Tensor<f64>) -> Result<DiscreteSolution, PuzzleError> {
        if x0.shape() != self.c.shape() {
            return Err(PuzzleError::ShapeMismatch(format!(
                "state {:?} vs encoding {:?}",
                x0.shape(),
                self.c.shape()
            )));
        }
        let x = x0.data();
        Ok(match &self.payload {
            Payload::Sudoku(p) => {
                let sites = p.cells.len();
                let digits = (0..sites)
                    .map(|i| match p.cells[i] {
                        0 => argmax_channel(x, p.side(), sites, i) as u8 + 1,
                        h => h,
                    })
                    .collect();
                DiscreteSolution::Digits(digits)
            }
            Payload::Maze(p) => {
                let n = p.walls.len();
                let mut on: Vec<bool> = (0..n).map(|i| x[n + i] > 0.5).collect();
                on[p.start.0 * p.size + p.start.1] = true;
                on[p.end.0 * p.size + p.end.1] = true;
                DiscreteSolution::Cells(on)
            }
            Payload::SimplePath(p) => {
                let off = p.n_vertices();
                let edges = (0..p.n_edges())
                    .map(|e| !p.removed[e] && x[off + e] > 0.5)
                    .collect();
                DiscreteSolution::Edges(edges)
            }
            Payload::Preference(p) => {
                let n = p.n_items();
                let ranks = (0..n)
                    .map(|i| p.given[i].unwrap_or_else(|| argmax_channel(x, n, n, i) as u8 + 1))
                    .collect();
                DiscreteSolution::Ranks(ranks)
            }
            Payload::MinCost(p) => {
                let n = p.costs.len();
                let mut on: Vec<bool> = (0..n).map(|i| x[n + i] > 0.5).collect();
                on[0] = true;
                on[n - 1] = true;
                DiscreteSolution::Cells(on)
            }
        })
    }

    /// Exact one-hot / binary tensor of `sol`, agreeing with `c` on masked sites.
    pub fn solution_tensor(&self, sol: &DiscreteSolution) -> Result<Tensor<f64>, PuzzleError> {
        self.check_shape(sol)?;
        let mut t = self.c.clone();
        let x = t.data_mut();
        match (&self.payload, sol) {
            (Payload::Sudoku(p), DiscreteSolution::Digits(d)) => {
                let sites = d.len();
                for (i, &v) in d.iter().enumerate() {
                    for ch in 0..p.side() {
                        x[ch * sites + i] = f64::from(u8::from(ch + 1 == v as usize));
                    }
                }
            }
            (Payload::Preference(p), DiscreteSolution::Ranks(r)) => {
                let n = p.n_items();
                for (i, &v) in r.iter().enumerate() {
                    for ch in 0..n {
                        x[ch * n + i] = f64::from(u8::from(ch + 1 == v as usize));
                    }
                }
            }
            (Payload::Maze(_), DiscreteSolution::Cells(on))
            | (Payload::MinCost(_), DiscreteSolution::Cells(on)) => {
                let n = on.len();
                for (i, &o) in on.iter().enumerate() {
                    x[n + i] = f64::from(u8::from(o));
                }
            }
            (Payload::SimplePath(p), DiscreteSolution::Edges(e)) => {
                let off = p.n_vertices();
                for (i, &o) in e.iter().enumerate() {
                    x[off + i] = f64::from(u8::from(o));
                }
            }
            _ => unreachable!("shape checked"),
        }
        // masked coordinates stay exactly at the observation
        for ((v, &cv), &m) in x.iter_mut().zip(self.c.data()).zip(self.mask.data()) {
            if m == 1.0 {
                *v = cv;
            }
        }
        Ok(t)
    }

    /// The task's constraint rules.
    pub fn is_consistent(&self, sol: &DiscreteSolution) -> bool {
        if self.check_shape(sol).is_err() {
            return false;
        }
        match (&self.payload, sol) {
            (Payload::Sudoku(p), DiscreteSolution::Digits(d)) => sudoku::is_valid_completion(p, d),
            (Payload::Maze(p), DiscreteSolution::Cells(on)) => maze::is_valid_path(p, on),
            (Payload::SimplePath(p), DiscreteSolution::Edges(e)) => {
                simple_path::is_valid_path(p, e)
            }
            (Payload::Preference(p), DiscreteSolution::Ranks(r)) => {
                preference::is_valid_ranking(p, r)
            }
            (Payload::MinCost(p), DiscreteSolution::Cells(on)) => min_cost::is_optimal_path(p, on),
            _ => false,
        }
    }

    /// For min-cost instances: the path is connected, regardless of its cost.
    pub fn is_connected(&self, sol: &DiscreteSolution) -> bool {
        match (&self.payload, sol) {
            (Payload::MinCost(p), DiscreteSolution::Cells(on)) => {
                min_cost::is_connected_path(p, on)
            }
            _ => self.is_consistent(sol),
        }
    }

    pub fn check(&self, sol: &DiscreteSolution, mode: CheckMode) -> Result<bool, PuzzleError> {
        self.check_shape(sol)?;
        match mode {
            CheckMode::Rules => Ok(self.is_consistent(sol)),
            CheckMode::GroundTruth => {
                let gt = self
                    .ground_truth
                    .as_ref()
                    .ok_or(PuzzleError::MissingGroundTruth(self.idx))?;
                Ok(gt == sol)
            }
        }
    }

    /// All solutions, or `CapExceeded` when more than `cap` exist.
    pub fn oracle_solve(&self, cap: usize) -> Result<Vec<DiscreteSolution>, PuzzleError> {
        Ok(match &self.payload {
            Payload::Sudoku(p) => p
                .solve(cap)?
                .into_iter()
                .map(DiscreteSolution::Digits)
                .collect(),
            Payload::Maze(p) => p
                .solve(cap)?
                .into_iter()
                .map(DiscreteSolution::Cells)
                .collect(),
            Payload::SimplePath(p) => p
                .solve(cap)?
                .into_iter()
                .map(DiscreteSolution::Edges)
                .collect(),
            Payload::Preference(p) => p
                .solve(cap)?
                .into_iter()
                .map(DiscreteSolution::Ranks)
                .collect(),
            Payload::MinCost(p) => p
                .solve(cap)?
                .into_iter()
                .map(DiscreteSolution::Cells)
                .collect(),
        })
    }

    /// Indices of sites that are not fixed by hints; the hamming metric
    /// is computed over these.
    pub fn free_sites(&self) -> Vec<usize> {
        match &self.payload {
            Payload::Sudoku(p) => (0..p.cells.len()).filter(|&i| p.cells[i] == 0).collect(),
            Payload::Maze(p) => {
                let fixed = [p.start.0 * p.size + p.start.1, p.end.0 * p.size + p.end.1];
                (0..p.walls.len()).filter(|i| !fixed.contains(i)).collect()
            }
            Payload::SimplePath(p) => (0..p.n_edges()).filter(|&e| !p.removed[e]).collect(),
            Payload::Preference(p) => (0..p.n_items()).filter(|&i| p.given[i].is_none()).collect(),
            Payload::MinCost(p) => (1..p.costs.len() - 1).collect(),
        }
    }
}

fn kind_name(sol: &DiscreteSolution) -> &'static str {
    match sol {
        DiscreteSolution::Digits(_) => "digit",
        DiscreteSolution::Cells(_) => "cell",
        DiscreteSolution::Edges(_) => "edge",
        DiscreteSolution::Ranks(_) => "rank",
    }
}

/// Channels-first argmax at site `i`; ties go to the lowest channel.
fn argmax_channel(x: &[f64], channels: usize, sites: usize, i: usize) -> usize {
    let mut best = 0;
    for ch in 1..channels {
        if x[ch * sites + i] > x[best * sites + i] {
            best = ch;
        }
    }
    best
}

/// Builds `(c, mask)` for a payload.
pub fn encode(payload: &Payload) -> Result<(Tensor<f64>, Tensor<f64>), PuzzleError> {
    match payload {
        Payload::Sudoku(p) => {
            let side = p.side();
            let sites = side * side;
            let mut c = vec![0.0; side * sites];
            let mut m = vec![0.0; side * sites];
            for (i, &d) in p.cells.iter().enumerate() {
                if d != 0 {
                    c[(d as usize - 1) * sites + i] = 1.0;
                    for ch in 0..side {
                        m[ch * sites + i] = 1.0;
                    }
                }
            }
            Ok((
                Tensor::new(&[side, side, side], c)?,
                Tensor::new(&[side, side, side], m)?,
            ))
        }
        Payload::Maze(p) => {
            let n = p.size * p.size;
            let mut c = vec![0.0; 2 * n];
            let mut m = vec![0.0; 2 * n];
            for i in 0..n {
                c[i] = f64::from(u8::from(p.walls[i]));
                m[i] = 1.0;
            }
            for cell in [p.start, p.end] {
                let i = n + cell.0 * p.size + cell.1;
                c[i] = 1.0;
                m[i] = 1.0;
            }
            let shape = [2, p.size, p.size];
            Ok((Tensor::new(&shape, c)?, Tensor::new(&shape, m)?))
        }
        Payload::SimplePath(p) => {
            let nv = p.n_vertices();
            let len = nv + p.n_edges();
            let mut c = vec![0.0; len];
            let mut m = vec![0.0; len];
            m[..nv].fill(1.0);
            c[p.source] = 1.0;
            c[p.target] = 1.0;
            for (e, &r) in p.removed.iter().enumerate() {
                if r {
                    m[nv + e] = 1.0;
                }
            }
            Ok((Tensor::new(&[1, 1, len], c)?, Tensor::new(&[1, 1, len], m)?))
        }
        Payload::Preference(p) => {
            let n = p.n_items();
            let mut c = vec![0.0; n * n];
            let mut m = vec![0.0; n * n];
            for (i, r) in p.given.iter().enumerate() {
                if let Some(r) = r {
                    c[(*r as usize - 1) * n + i] = 1.0;
                    for ch in 0..n {
                        m[ch * n + i] = 1.0;
                    }
                }
            }
            Ok((Tensor::new(&[n, 1, n], c)?, Tensor::new(&[n, 1, n], m)?))
        }
        Payload::MinCost(p) => {
            let n = p.costs.len();
            let max = f64::from(p.max_cost());
            let mut c = vec![0.0; 2 * n];
            let mut m = vec![0.0; 2 * n];
            for i in 0..n {
                c[i] = f64::from(p.costs[i]) / max;
                m[i] = 1.0;
            }
            for i in [n, 2 * n - 1] {
                c[i] = 1.0;
                m[i] = 1.0;
            }
            let shape = [2, p.size, p.size];
            Ok((Tensor::new(&shape, c)?, Tensor::new(&shape, m)?))
        }
    }
}

/// Draws one instance with ground truth attached. `size` is the Sudoku
/// side (4, 9, 16), maze side, path-grid side, item count, or cost-grid side.
pub fn generate<R: Rng>(
    task: Task,
    size: usize,
    opts: &GenOptions,
    idx: u64,
    rng: &mut R,
) -> Result<PuzzleInstance, PuzzleError> {
    let (payload, gt) = match task {
        Task::Sudoku => {
            let b = (size as f64).sqrt().round() as usize;
            if b * b != size {
                return Err(PuzzleError::Infeasible(format!(
                    "Sudoku side {size} is not a square"
                )));
            }
            let hints = opts.hints.unwrap_or(size * size / 2);
            let (p, sol) = sudoku::generate(b, hints, opts.unique, opts.oracle_cap, rng)?;
            (Payload::Sudoku(p), DiscreteSolution::Digits(sol))
        }
        Task::Maze => {
            let (p, on) = maze::generate(size, rng)?;
            (Payload::Maze(p), DiscreteSolution::Cells(on))
        }
        Task::SimplePath => {
            let (p, e) = simple_path::generate(size, opts.edge_removal, rng)?;
            (Payload::SimplePath(p), DiscreteSolution::Edges(e))
        }
        Task::Preference => {
            let (p, r) = preference::generate(size, opts.given_items, opts.preference_noise, rng)?;
            (Payload::Preference(p), DiscreteSolution::Ranks(r))
        }
        Task::MinCostPath => {
            let (p, on) = min_cost::generate(size, opts.cost_range, rng)?;
            (Payload::MinCost(p), DiscreteSolution::Cells(on))
        }
    };
    PuzzleInstance::new(idx, payload, Some(gt))
}
