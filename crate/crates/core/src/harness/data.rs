//! Dataset generation and the on-disk split layout.

use std::fmt;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{write_atomic, HarnessError, RunConfig};
use crate::puzzles::{self, io, PuzzleInstance, Task};
use crate::rng::{domain, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `train.txt` etc. for Sudoku, `.jsonl` for the record-based tasks.
pub fn dataset_file(dir: &Path, task: Task, split: Split) -> PathBuf {
    let ext = if task == Task::Sudoku { "txt" } else { "jsonl" };
    dir.join(format!("{}.{ext}", split.name()))
}

pub fn read_file(path: &Path) -> Result<Vec<PuzzleInstance>, HarnessError> {
    let f = std::fs::File::open(path).map_err(HarnessError::io(path))?;
    Ok(io::read_instances(BufReader::new(f))?)
}

/// Loads one split and checks it holds instances of the expected task and size.
pub fn load_split(
    dir: &Path,
    task: Task,
    size: usize,
    split: Split,
) -> Result<Vec<PuzzleInstance>, HarnessError> {
    let path = dataset_file(dir, task, split);
    let ps = read_file(&path)?;
    if let Some(p) = ps.iter().find(|p| p.task() != task || p.size() != size) {
        return Err(HarnessError::Mismatch(format!(
            "{}: instance {} is {} size {}, config says {task} size {size}",
            path.display(),
            p.idx,
            p.task(),
            p.size()
        )));
    }
    Ok(ps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenSummary {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Split sizes: train and validation are rounded, test takes the rest.
pub fn split_counts(count: usize, f: [f64; 3]) -> GenSummary {
    let train = ((count as f64 * f[0]).round() as usize).min(count);
    let val = ((count as f64 * f[1]).round() as usize).min(count - train);
    GenSummary {
        train,
        val,
        test: count - train - val,
    }
}

/// Draws `cfg.count` instances (each from its own stream, so the set does not
/// depend on thread count) and writes the three split files.
pub fn cmd_gen(cfg: &RunConfig) -> Result<GenSummary, HarnessError> {
    cfg.validate()?;
    let all: Result<Vec<PuzzleInstance>, _> = (0..cfg.count as u64)
        .into_par_iter()
        .map(|i| {
            puzzles::generate(
                cfg.task,
                cfg.size,
                &cfg.gen,
                i,
                &mut stream(cfg.seed, domain::GENERATE, i, 0),
            )
        })
        .collect();
    let all = all?;
    let n = split_counts(all.len(), cfg.split_fractions());
    std::fs::create_dir_all(&cfg.dataset).map_err(HarnessError::io(&cfg.dataset))?;
    let parts = [
        &all[..n.train],
        &all[n.train..n.train + n.val],
        &all[n.train + n.val..],
    ];
    for (split, part) in Split::ALL.into_iter().zip(parts) {
        let mut buf = Vec::new();
        io::write_instances(&mut buf, part)?;
        let path = dataset_file(&cfg.dataset, cfg.task, split);
        write_atomic(&path, &buf).map_err(HarnessError::io(&path))?;
    }
    Ok(n)
}
