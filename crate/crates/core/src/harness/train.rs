//! Supervised and RL training drivers with checkpointing and logs.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{load_split, Split};
use super::{write_atomic, Checkpoint, CheckpointMeta, DirLock, HarnessError, RunConfig};
use crate::denoiser::Denoiser;
use crate::diffusion::{free_count, sl_loss, sl_loss_graph, NoiseSchedule, SlExample};
use crate::puzzles::{PuzzleError, PuzzleInstance};
use crate::rl::{rl_train_loop, EpochLog, RlError, RlOutcome};
use crate::rng::{domain, stream};
use crate::tensor::{chunked_backward, AdamWState, Tensor};

pub const SL_BEST: &str = "sl_best.ckpt";
pub const SL_LAST: &str = "sl_last.ckpt";
pub const SL_LOG: &str = "sl_log.jsonl";
pub const RL_BEST: &str = "rl_best.ckpt";
pub const RL_LAST: &str = "rl_last.ckpt";
pub const RL_LOG: &str = "rl_log.jsonl";
pub const REWARD_CSV: &str = "reward.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlEpochLog {
    pub epoch: usize,
    /// Mean of the per-batch losses.
    pub train_loss: f64,
    /// Loss on fixed noise draws over the validation split, if any.
    pub val_loss: Option<f64>,
    pub best: bool,
    pub wallclock_s: f64,
}

/// Training state between epochs; everything needed to continue bit-exactly.
#[derive(Debug, Clone)]
pub struct SlOutcome {
    pub net: Denoiser<f32>,
    pub opt: AdamWState<f32>,
    /// Completed epochs.
    pub epoch: usize,
    pub best: Option<(f64, usize)>,
}

impl SlOutcome {
    pub fn fresh(cfg: &RunConfig) -> Result<Self, HarnessError> {
        let net =
            Denoiser::<f32>::new(cfg.net_config(), &mut stream(cfg.seed, domain::INIT, 0, 0))?;
        let opt = AdamWState::new(&net.params, cfg.sl.optimizer());
        Ok(Self {
            net,
            opt,
            epoch: 0,
            best: None,
        })
    }

    pub fn checkpoint(&self, cfg: &RunConfig) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                stage: "sl".into(),
                epoch: self.epoch,
                task: cfg.task,
                size: cfg.size,
                config: cfg.to_json(),
                best: self.best,
            },
            net: self.net.clone(),
            optimizer: Some(self.opt.clone()),
        }
    }
}

fn targets(ps: &[PuzzleInstance]) -> Result<Vec<Tensor<f64>>, HarnessError> {
    ps.iter()
        .map(|p| {
            let gt = p
                .ground_truth
                .as_ref()
                .ok_or(PuzzleError::MissingGroundTruth(p.idx))?;
            Ok(p.solution_tensor(gt)?)
        })
        .collect()
}

/// Free-coordinate-weighted loss over fixed examples, evaluated in parallel chunks.
fn fixed_loss(
    net: &Denoiser<f32>,
    examples: &[SlExample<f32>],
    s: &NoiseSchedule,
) -> Result<f64, HarnessError> {
    let parts: Result<Vec<(f64, usize)>, HarnessError> = examples
        .par_chunks(64)
        .map(|ch| {
            let n = free_count(ch);
            Ok((sl_loss(net, ch, s)? * n as f64, n))
        })
        .collect();
    let (sum, n) = parts?
        .into_iter()
        .fold((0.0, 0), |(a, b), (x, y)| (a + x, b + y));
    Ok(sum / n.max(1) as f64)
}

/// Runs SL epochs `state.epoch + 1 ..= cfg.sl.epochs`. Batch order and noise
/// come from streams keyed by epoch and batch number, so a resumed run
/// matches an uninterrupted one.
pub fn train_sl<F>(
    cfg: &RunConfig,
    train: &[PuzzleInstance],
    val: &[PuzzleInstance],
    mut state: SlOutcome,
    mut on_epoch: F,
) -> Result<SlOutcome, HarnessError>
where
    F: FnMut(&SlEpochLog, &SlOutcome) -> Result<(), HarnessError>,
{
    cfg.validate()?;
    if train.is_empty() {
        return Err(PuzzleError::EmptySet.into());
    }
    let s = cfg.noise_schedule()?;
    let x0 = targets(train)?;
    let val_x0 = targets(val)?;
    let val_examples: Vec<SlExample<f32>> = val
        .iter()
        .zip(&val_x0)
        .map(|(p, x)| SlExample::draw(p, x, &s, &mut stream(cfg.seed, domain::VAL_NOISE, p.idx, 0)))
        .collect();
    state.opt.config = cfg.sl.optimizer();
    let start = Instant::now();

    for epoch in state.epoch + 1..=cfg.sl.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream(cfg.seed, domain::SL_SHUFFLE, epoch as u64, 0));
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, idx) in order.chunks(cfg.sl.batch_size).enumerate() {
            let mut rng = stream(cfg.seed, domain::SL_NOISE, epoch as u64, b as u64);
            let batch: Vec<SlExample<f32>> = idx
                .iter()
                .map(|&i| SlExample::draw(&train[i], &x0[i], &s, &mut rng))
                .collect();
            let denom = free_count(&batch);
            let gc = cfg.sl.grad_chunk;
            let net = &state.net;
            let (loss, grads) =
                chunked_backward(&net.params, batch.len().div_ceil(gc), |g, w, k| {
                    let part = &batch[k * gc..((k + 1) * gc).min(batch.len())];
                    sl_loss_graph(g, w, net, part, &s, Some(denom))
                })?;
            state.opt.step(&mut state.net.params, &grads)?;
            loss_sum += loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(fixed_loss(&state.net, &val_examples, &s)?)
        };
        let metric = val_loss.unwrap_or(train_loss);
        if !metric.is_finite() {
            return Err(HarnessError::Tensor(crate::tensor::TensorError::NonFinite(
                "SL loss",
            )));
        }
        let best = state.best.is_none_or(|(b, _)| metric < b);
        if best {
            state.best = Some((metric, epoch));
        }
        state.epoch = epoch;
        let log = SlEpochLog {
            epoch,
            train_loss,
            val_loss,
            best,
            wallclock_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&log, &state)?;
    }
    Ok(state)
}

fn open_log(path: &Path, append: bool) -> Result<File, HarnessError> {
    OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(HarnessError::io(path))
}

fn log_line<S: Serialize>(f: &mut File, path: &Path, row: &S) -> Result<(), HarnessError> {
    let line = serde_json::to_string(row)?;
    writeln!(f, "{line}")
        .and_then(|_| f.flush())
        .map_err(HarnessError::io(path))
}

fn check_compatible(cfg: &RunConfig, ck: &Checkpoint) -> Result<(), HarnessError> {
    if ck.meta.task != cfg.task || ck.meta.size != cfg.size {
        return Err(HarnessError::Mismatch(format!(
            "checkpoint is for {} size {}, config says {} size {}",
            ck.meta.task, ck.meta.size, cfg.task, cfg.size
        )));
    }
    if ck.net.config != cfg.net_config() {
        return Err(HarnessError::Mismatch(
            "checkpoint network shape differs from config".into(),
        ));
    }
    Ok(())
}

/// `train-sl`: writes best/last checkpoints and a JSONL log under `cfg.out`.
/// With `resume`, continues from that checkpoint and appends to the log.
pub fn cmd_train_sl(cfg: &RunConfig, resume: Option<&Path>) -> Result<SlOutcome, HarnessError> {
    cfg.validate()?;
    let _lock = DirLock::acquire(&cfg.out).map_err(HarnessError::io(&cfg.out))?;
    let train = load_split(&cfg.dataset, cfg.task, cfg.size, Split::Train)?;
    let val = load_split(&cfg.dataset, cfg.task, cfg.size, Split::Val)?;
    let state = match resume {
        None => SlOutcome::fresh(cfg)?,
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            check_compatible(cfg, &ck)?;
            if ck.meta.stage != "sl" {
                return Err(HarnessError::Mismatch(
                    "can only resume from an SL checkpoint".into(),
                ));
            }
            let opt = ck.optimizer.ok_or_else(|| {
                HarnessError::Checkpoint("no optimizer state to resume from".into())
            })?;
            SlOutcome {
                net: ck.net,
                opt,
                epoch: ck.meta.epoch,
                best: ck.meta.best,
            }
        }
    };
    let log_path = cfg.out.join(super::train::SL_LOG);
    let mut log = open_log(&log_path, resume.is_some())?;
    train_sl(cfg, &train, &val, state, |row, st| {
        let ck = st.checkpoint(cfg);
        if row.best {
            ck.save(&cfg.out.join(SL_BEST))?;
        }
        ck.save(&cfg.out.join(SL_LAST))?;
        log_line(&mut log, &log_path, row)
    })
}

pub fn reward_csv(logs: &[EpochLog]) -> String {
    let mut s = String::from("epoch,avg_reward\n");
    for l in logs {
        s.push_str(&format!("{},{}\n", l.epoch, l.avg_reward_full_trainset));
    }
    s
}

/// `train-rl`: fine-tunes the network in `init` on the train split, writing
/// best/last checkpoints, a JSONL epoch log and the reward curve CSV.
pub fn cmd_train_rl(cfg: &RunConfig, init: &Path) -> Result<RlOutcome<f32>, HarnessError> {
    cfg.validate()?;
    let _lock = DirLock::acquire(&cfg.out).map_err(HarnessError::io(&cfg.out))?;
    let train = load_split(&cfg.dataset, cfg.task, cfg.size, Split::Train)?;
    let ck = Checkpoint::load(init)?;
    check_compatible(cfg, &ck)?;
    let s = cfg.noise_schedule()?;
    let log_path = cfg.out.join(RL_LOG);
    let mut log = open_log(&log_path, false)?;
    let csv_path = cfg.out.join(REWARD_CSV);
    write_atomic(&csv_path, reward_csv(&[]).as_bytes()).map_err(HarnessError::io(&csv_path))?;
    let mut done = Vec::new();

    let mut hook = |row: &EpochLog, net: &Denoiser<f32>, best: bool| -> Result<(), HarnessError> {
        let ck = Checkpoint {
            meta: CheckpointMeta {
                stage: "rl".into(),
                epoch: row.epoch,
                task: cfg.task,
                size: cfg.size,
                config: cfg.to_json(),
                best: None,
            },
            net: net.clone(),
            optimizer: None,
        };
        if best {
            ck.save(&cfg.out.join(RL_BEST))?;
        }
        ck.save(&cfg.out.join(RL_LAST))?;
        log_line(&mut log, &log_path, row)?;
        done.push(row.clone());
        write_atomic(&csv_path, reward_csv(&done).as_bytes()).map_err(HarnessError::io(&csv_path))
    };
    rl_train_loop(&ck.net, &train, &s, &cfg.rl, cfg.seed, |row, net, best| {
        hook(row, net, best).map_err(|e| RlError::Hook(Box::new(e)))
    })
    .map_err(|e| match e {
        RlError::Hook(inner) => match inner.downcast::<HarnessError>() {
            Ok(h) => *h,
            Err(other) => RlError::Hook(other).into(),
        },
        e => e.into(),
    })
}
