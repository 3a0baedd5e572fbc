//! Greedy single-pass evaluation and its JSON report.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::read_file;
use super::{Checkpoint, HarnessError, RunConfig};
use crate::denoiser::Denoiser;
use crate::diffusion::{sample_greedy_batch, NoiseSchedule};
use crate::puzzles::{
    metrics, DiscreteSolution, MazePuzzle, MetricsReport, Payload, PuzzleInstance, Task,
};
use crate::rng::{domain, stream};

pub const SAMPLER: &str = "greedy single-pass (posterior mean from a seeded x_T)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sampler: String,
    pub seed: u64,
    pub steps: usize,
    pub model_task: Task,
    pub model_size: usize,
    pub task: Task,
    pub size: usize,
    pub cross_eval: bool,
    /// Dataset mazes were placed inside the model's larger frame.
    pub embedded: bool,
    pub metrics: MetricsReport,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Places a maze at a random offset inside a `frame × frame` grid of walls.
pub fn embed_maze<R: Rng>(
    p: &PuzzleInstance,
    frame: usize,
    rng: &mut R,
) -> Result<PuzzleInstance, HarnessError> {
    let Payload::Maze(m) = &p.payload else {
        return Err(HarnessError::Mismatch("only mazes can be embedded".into()));
    };
    if m.size > frame {
        return Err(HarnessError::Mismatch(format!(
            "maze of size {} does not fit in {frame}",
            m.size
        )));
    }
    let (dr, dc) = (
        rng.random_range(0..=frame - m.size),
        rng.random_range(0..=frame - m.size),
    );
    let shift = |on: &[bool], fill: bool| {
        let mut out = vec![fill; frame * frame];
        for r in 0..m.size {
            for c in 0..m.size {
                out[(r + dr) * frame + c + dc] = on[r * m.size + c];
            }
        }
        out
    };
    let walls = shift(&m.walls, true);
    let moved = MazePuzzle::new(
        frame,
        walls,
        (m.start.0 + dr, m.start.1 + dc),
        (m.end.0 + dr, m.end.1 + dc),
    )?;
    let gt = match &p.ground_truth {
        Some(DiscreteSolution::Cells(on)) => Some(DiscreteSolution::Cells(shift(on, false))),
        Some(_) => {
            return Err(HarnessError::Mismatch(
                "maze ground truth is not a cell set".into(),
            ))
        }
        None => None,
    };
    Ok(PuzzleInstance::new(p.idx, Payload::Maze(moved), gt)?)
}

/// Runs greedy inference over `puzzles`. Unless `cross_eval` is set the data
/// must match the model's task and size; with it, smaller mazes are embedded
/// in the model's frame and anything else with matching channels runs as is.
pub fn evaluate(
    net: &Denoiser<f32>,
    model: (Task, usize),
    puzzles: &[PuzzleInstance],
    s: &NoiseSchedule,
    seed: u64,
    cross_eval: bool,
) -> Result<EvalReport, HarnessError> {
    let first = puzzles
        .first()
        .ok_or(crate::puzzles::PuzzleError::EmptySet)?;
    let (task, size) = (first.task(), first.size());
    if puzzles.iter().any(|p| p.task() != task || p.size() != size) {
        return Err(HarnessError::Mismatch(
            "dataset mixes tasks or sizes".into(),
        ));
    }
    let matches = (task, size) == model;
    if !matches && !cross_eval {
        return Err(HarnessError::Mismatch(format!(
            "model is {} size {}, data is {task} size {size}; pass --cross-eval to run anyway",
            model.0, model.1
        )));
    }
    let embedded = !matches && task == Task::Maze && model.0 == Task::Maze && size < model.1;
    let owned: Vec<PuzzleInstance>;
    let ps: &[PuzzleInstance] = if embedded {
        owned = puzzles
            .iter()
            .map(|p| embed_maze(p, model.1, &mut stream(seed, domain::EMBED, p.idx, 0)))
            .collect::<Result<_, _>>()?;
        &owned
    } else {
        puzzles
    };
    if ps[0].shape()[0] != net.config.in_channels {
        return Err(HarnessError::Mismatch(format!(
            "data has {} channels, model expects {}",
            ps[0].shape()[0],
            net.config.in_channels
        )));
    }
    let refs: Vec<&PuzzleInstance> = ps.iter().collect();
    let preds: Vec<DiscreteSolution> = sample_greedy_batch(net, &refs, s, seed)?
        .into_iter()
        .map(|(_, sol)| sol)
        .collect();
    Ok(EvalReport {
        sampler: SAMPLER.into(),
        seed,
        steps: s.steps,
        model_task: model.0,
        model_size: model.1,
        task,
        size,
        cross_eval,
        embedded,
        metrics: metrics(&preds, ps)?,
    })
}

/// `eval`: loads a checkpoint and a dataset file and evaluates greedily. The
/// schedule comes from the config echoed into the checkpoint.
pub fn cmd_eval(
    checkpoint: &Path,
    dataset: &Path,
    seed: u64,
    cross_eval: bool,
) -> Result<EvalReport, HarnessError> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg: RunConfig = serde_json::from_value(ck.meta.config.clone())?;
    let puzzles = read_file(dataset)?;
    evaluate(
        &ck.net,
        (ck.meta.task, ck.meta.size),
        &puzzles,
        &cfg.noise_schedule()?,
        seed,
        cross_eval,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::puzzles::{generate, GenOptions};

    #[test]
    fn embedded_maze_keeps_its_solution() {
        let p = generate(
            Task::Maze,
            5,
            &GenOptions::default(),
            3,
            &mut stream(1, 0, 0, 0),
        )
        .unwrap();
        for k in 0..10 {
            let e = embed_maze(&p, 10, &mut stream(1, domain::EMBED, k, 0)).unwrap();
            assert_eq!(e.size(), 10);
            assert!(e.is_consistent(e.ground_truth.as_ref().unwrap()));
            let Payload::Maze(m) = &e.payload else {
                unreachable!()
            };
            assert_eq!(m.walls.iter().filter(|w| !**w).count(), {
                let Payload::Maze(o) = &p.payload else {
                    unreachable!()
                };
                o.walls.iter().filter(|w| !**w).count()
            });
        }
    }
}
