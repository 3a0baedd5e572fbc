//! Policy-gradient fine-tuning over the denoising chain: rule-based rewards,
//! group-normalized advantages, the clipped ratio objective, dynamic group
//! sizes and the epoch loop with puzzle filtering and early stopping.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::diffusion::{self, DiffusionError, NoiseSchedule, Trajectory};
use crate::puzzles::{PuzzleError, PuzzleInstance};
use crate::rng::{domain, stream};
use crate::tensor::{
    chunked_backward, AdamWConfig, AdamWState, Gradients, Graph, NodeId, Real, Tensor, TensorError,
};

#[derive(Debug, thiserror::Error)]
pub enum RlError {
    #[error("invalid RL config: {0}")]
    InvalidConfig(String),
    #[error("empty group or batch")]
    Empty,
    #[error("importance ratio diverged")]
    Divergence,
    /// Raised by the per-epoch hook of [`rl_train_loop`].
    #[error("epoch hook failed")]
    Hook(#[source] Box<dyn std::error::Error + Send + Sync>),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Puzzle(#[from] PuzzleError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl From<crate::denoiser::DenoiserError> for RlError {
    fn from(e: crate::denoiser::DenoiserError) -> Self {
        RlError::Diffusion(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    pub g_initial: usize,
    /// Group-size scaling factor; the largest tier is `gamma · g_initial`.
    pub gamma: f64,
    pub clip_eps: f64,
    /// Objective ascent passes per collection round.
    pub inner_epochs: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub std_floor: f64,
    /// Puzzles per collection round.
    pub batch_size: usize,
    /// `(trajectory, timestep)` pairs per gradient graph.
    pub grad_chunk: usize,
    /// Stochastic rollouts per puzzle in the full-trainset reward evaluation.
    pub eval_samples: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            g_initial: 64,
            gamma: 4.0,
            clip_eps: 0.2,
            inner_epochs: 1,
            lr: 1e-6,
            max_epochs: 50,
            patience: 5,
            std_floor: 1e-8,
            batch_size: 32,
            grad_chunk: 64,
            eval_samples: 1,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::InvalidConfig(m.into()));
        if self.gamma.partial_cmp(&1.0) != Some(std::cmp::Ordering::Greater) {
            return bad("gamma must exceed 1");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip epsilon must lie in (0, 1)");
        }
        if self.g_initial < 2 {
            return bad("groups need at least two trajectories");
        }
        if self.batch_size == 0
            || self.grad_chunk == 0
            || self.eval_samples == 0
            || self.inner_epochs == 0
        {
            return bad(
                "batch size, gradient chunk, eval samples and inner epochs must be positive",
            );
        }
        if !(self.lr >= 0.0) || !(self.std_floor > 0.0) {
            return bad("learning rate must be non-negative and std floor positive");
        }
        Ok(())
    }

    /// Group sizes of the three tiers, largest first. The middle tier is the
    /// geometric midpoint, which gives 256/128/64 for the defaults.
    pub fn tiers(&self) -> [usize; 3] {
        let g = self.g_initial as f64;
        [
            (g * self.gamma).round() as usize,
            (g * self.gamma.sqrt()).round() as usize,
            self.g_initial,
        ]
    }
}

/// Per-puzzle bookkeeping for one collection round.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRecord {
    pub idx: u64,
    pub group_size: usize,
    pub rewards: Vec<f64>,
    pub acc: f64,
}

impl GroupRecord {
    pub fn new(idx: u64, rewards: Vec<f64>) -> Result<Self, RlError> {
        if rewards.len() < 2 {
            return Err(RlError::Empty);
        }
        let acc = rewards.iter().sum::<f64>() / rewards.len() as f64;
        Ok(Self {
            idx,
            group_size: rewards.len(),
            rewards,
            acc,
        })
    }
}

/// 1 when the discretized terminal state passes the puzzle's reward check.
pub fn assign_reward<T: Real>(
    traj: &mut Trajectory<T>,
    puzzle: &PuzzleInstance,
) -> Result<f64, RlError> {
    let sol = puzzle.discretize(&traj.x0().cast())?;
    let r = f64::from(u8::from(puzzle.check(&sol, puzzle.reward_mode())?));
    traj.reward = Some(r);
    Ok(r)
}

/// `(r − mean) / max(std, floor)` with the population standard deviation.
pub fn compute_advantages(rewards: &[f64], floor: f64) -> Result<Vec<f64>, RlError> {
    if rewards.is_empty() {
        return Err(RlError::Empty);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(floor);
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Group sizes for a batch of `(idx, previous acc)`, returned in input
/// order. Puzzles are ranked by ascending acc (ties by idx); the first eighth
/// of ranks get the largest tier, the next quarter the middle tier.
pub fn assign_group_sizes(batch: &[(u64, f64)], cfg: &RlConfig) -> Result<Vec<usize>, RlError> {
    if batch.is_empty() {
        return Err(RlError::Empty);
    }
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by(|&a, &b| {
        batch[a]
            .1
            .total_cmp(&batch[b].1)
            .then(batch[a].0.cmp(&batch[b].0))
    });
    let [big, mid, base] = cfg.tiers();
    let n = batch.len();
    let mut sizes = vec![base; n];
    for (rank, &i) in order.iter().enumerate() {
        sizes[i] = if rank * 8 < n {
            big
        } else if rank * 8 < 3 * n {
            mid
        } else {
            base
        };
    }
    Ok(sizes)
}

/// One stochastic transition with its advantage, as consumed by the objective.
#[derive(Debug, Clone)]
pub struct Transition<'a, T: Real> {
    pub x_t: &'a Tensor<T>,
    pub x_prev: &'a Tensor<T>,
    pub mask: &'a Tensor<T>,
    pub t: usize,
    pub log_prob_old: f64,
    pub advantage: f64,
}

/// Every stochastic transition (`t ≥ 2`) of `trajs`, paired with advantages.
/// The final step is deterministic and carries no density.
pub fn transitions<'a, T: Real>(
    trajs: &'a [Trajectory<T>],
    advantages: &[f64],
    masks: &'a [Tensor<T>],
) -> Vec<Transition<'a, T>> {
    let mut out = Vec::new();
    for ((tr, &a), mask) in trajs.iter().zip(advantages).zip(masks) {
        let steps = tr.steps();
        for k in 0..steps.saturating_sub(1) {
            out.push(Transition {
                x_t: &tr.states[k],
                x_prev: &tr.states[k + 1],
                mask,
                t: steps - k,
                log_prob_old: tr.log_probs[k],
                advantage: a,
            });
        }
    }
    out
}

/// Records `Σ min(I·Â, clip(I, 1−ε, 1+ε)·Â) / denom` over `batch`.
pub fn ppo_objective_graph<T: Real>(
    g: &mut Graph<T>,
    w: &[NodeId],
    net: &Denoiser<T>,
    batch: &[Transition<'_, T>],
    s: &NoiseSchedule,
    clip_eps: f64,
    denom: usize,
) -> Result<NodeId, RlError> {
    let n = batch.len();
    let stack = |v: Vec<&Tensor<T>>| Tensor::stack(&v);
    let x_t = stack(batch.iter().map(|b| b.x_t).collect())?;
    let ts: Vec<usize> = batch.iter().map(|b| b.t).collect();
    let mut coef_b = Vec::with_capacity(n);
    let mut neg_inv_2s2 = Vec::with_capacity(n);
    let mut offset = Vec::with_capacity(n);
    let mut resid = Vec::with_capacity(x_t.numel());
    let mut free = Vec::with_capacity(x_t.numel());
    for b in batch {
        let (ca, cb) = s.mean_coefficients(b.t)?;
        let sigma2 = s.sigma2[b.t - 1];
        let mut n_free = 0usize;
        for ((&xp, &xt), &m) in b.x_prev.data().iter().zip(b.x_t.data()).zip(b.mask.data()) {
            let f = m != T::one();
            n_free += usize::from(f);
            free.push(if f { T::one() } else { T::zero() });
            // x_{t-1} − μ = (x_{t-1} − a·x_t) + b·ε̂
            resid.push(if f { xp - T::lit(ca) * xt } else { T::zero() });
        }
        coef_b.push(T::lit(cb));
        neg_inv_2s2.push(T::lit(-0.5 / sigma2));
        let norm = -0.5 * (2.0 * std::f64::consts::PI * sigma2).ln();
        offset.push(T::lit(norm * n_free as f64 - b.log_prob_old));
    }
    let shape = x_t.shape().to_vec();
    let x = g.input(x_t)?;
    let eps_hat = crate::denoiser::forward(g, w, &net.config, x, &ts)?;
    let scaled = g.scale_samples(eps_hat, coef_b)?;
    let resid = g.input(Tensor::new(&shape, resid)?)?;
    let d = g.add(resid, scaled)?;
    let free = g.input(Tensor::new(&shape, free)?)?;
    let d = g.mul(d, free)?;
    let sq = g.mul(d, d)?;
    let sq = g.sum_per_sample(sq)?;
    let quad = g.scale_samples(sq, neg_inv_2s2)?;
    let offset = g.input(Tensor::new(&[n], offset)?)?;
    let log_ratio = g.add(quad, offset)?;
    let ratio = g.exp(log_ratio).map_err(|_| RlError::Divergence)?;
    let adv: Vec<T> = batch.iter().map(|b| T::lit(b.advantage)).collect();
    let surr = g.scale_samples(ratio, adv.clone())?;
    let eps = T::lit(clip_eps);
    let clipped = g.clamp(ratio, T::one() - eps, T::one() + eps)?;
    let clipped = g.scale_samples(clipped, adv)?;
    let m = g.minimum(surr, clipped)?;
    let total = g.sum(m)?;
    Ok(g.scale(total, T::lit(1.0 / denom.max(1) as f64))?)
}

/// Objective value and its gradient (for ascent) over all transitions.
/// Transitions with zero advantage contribute exactly zero to both and are
/// skipped, but still count in the mean's denominator.
pub fn ppo_objective_and_grad<T: Real>(
    net: &Denoiser<T>,
    batch: &[Transition<'_, T>],
    s: &NoiseSchedule,
    clip_eps: f64,
    chunk: usize,
) -> Result<(f64, Gradients<T>), RlError> {
    let denom = batch.len();
    let active: Vec<&Transition<'_, T>> = batch.iter().filter(|b| b.advantage != 0.0).collect();
    if active.is_empty() {
        return Ok((0.0, Gradients::zeros_like(&net.params)));
    }
    let n_chunks = active.len().div_ceil(chunk);
    chunked_backward(&net.params, n_chunks, |g, w, i| {
        let part: Vec<Transition<'_, T>> = active[i * chunk..((i + 1) * chunk).min(active.len())]
            .iter()
            .map(|&b| b.clone())
            .collect();
        ppo_objective_graph(g, w, net, &part, s, clip_eps, denom)
    })
}

/// Objective value only.
pub fn ppo_objective<T: Real>(
    net: &Denoiser<T>,
    batch: &[Transition<'_, T>],
    s: &NoiseSchedule,
    clip_eps: f64,
) -> Result<f64, RlError> {
    let mut g = Graph::new();
    let w = g.bind(&net.params)?;
    let j = ppo_objective_graph(&mut g, &w, net, batch, s, clip_eps, batch.len())?;
    Ok(g.value(j).data()[0].as_f64())
}

/// Importance ratios of `batch` under `net`.
pub fn ratios<T: Real>(
    net: &Denoiser<T>,
    batch: &[Transition<'_, T>],
    s: &NoiseSchedule,
) -> Result<Vec<f64>, RlError> {
    let mut out = Vec::with_capacity(batch.len());
    for chunk in batch.chunks(diffusion::ROLLOUT_CHUNK) {
        let xs = Tensor::stack(&chunk.iter().map(|b| b.x_t).collect::<Vec<_>>())?;
        let ts: Vec<usize> = chunk.iter().map(|b| b.t).collect();
        let eps_hat = net.predict_noise(&xs, &ts)?;
        for (k, b) in chunk.iter().enumerate() {
            let (ca, cb) = s.mean_coefficients(b.t)?;
            let mean: Vec<T> = b
                .x_t
                .data()
                .iter()
                .zip(eps_hat.sample(k))
                .map(|(&x, &e)| T::lit(ca) * x - T::lit(cb) * e)
                .collect();
            let lp = diffusion::gaussian_log_density(
                b.x_prev.data(),
                &mean,
                b.mask.data(),
                s.sigma2[b.t - 1],
            );
            out.push((lp - b.log_prob_old).exp());
        }
    }
    Ok(out)
}

/// One line of the per-epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Puzzles still in the working set at the start of the epoch.
    pub working_set_size: usize,
    pub avg_reward_full_trainset: f64,
    /// Mean per-puzzle solved fraction over this epoch's collected groups.
    pub solved_rate: f64,
    /// Mean objective value over the epoch's update rounds (pre-update).
    pub objective_value: f64,
    pub skipped_rounds: usize,
    pub wallclock_s: f64,
}

#[derive(Debug, Clone)]
pub struct RlOutcome<T: Real> {
    pub last: Denoiser<T>,
    pub best: Denoiser<T>,
    pub best_epoch: usize,
    pub initial_reward: f64,
    pub logs: Vec<EpochLog>,
}

/// Mean terminal reward over `puzzles`, `samples` stochastic rollouts each,
/// with streams that depend only on `seed` so successive calls are comparable.
pub fn average_reward<T: Real>(
    net: &Denoiser<T>,
    puzzles: &[PuzzleInstance],
    s: &NoiseSchedule,
    seed: u64,
    samples: usize,
) -> Result<f64, RlError> {
    if puzzles.is_empty() {
        return Err(RlError::Empty);
    }
    let items: Vec<_> = puzzles
        .iter()
        .flat_map(|p| {
            (0..samples).map(move |j| (p, stream(seed, domain::RL_EVAL, p.idx, j as u64)))
        })
        .collect();
    let mut trajs = diffusion::rollout_batch(net, items, s)?;
    let mut total = 0.0;
    for (k, tr) in trajs.iter_mut().enumerate() {
        total += assign_reward(tr, &puzzles[k / samples])?;
    }
    Ok(total / trajs.len() as f64)
}

/// Stream key for trajectory `j` of puzzle `idx` in `epoch`.
fn rollout_stream(seed: u64, epoch: usize, idx: u64, j: usize) -> crate::rng::StreamRng {
    stream(seed, domain::ROLLOUT, epoch as u64, (idx << 20) | j as u64)
}

/// The epoch loop. `on_epoch` sees each log line with the current network
/// and whether it is the new best; returning an error aborts the run.
pub fn rl_train_loop<T, F>(
    init: &Denoiser<T>,
    puzzles: &[PuzzleInstance],
    s: &NoiseSchedule,
    cfg: &RlConfig,
    seed: u64,
    mut on_epoch: F,
) -> Result<RlOutcome<T>, RlError>
where
    T: Real,
    F: FnMut(&EpochLog, &Denoiser<T>, bool) -> Result<(), RlError>,
{
    cfg.validate()?;
    if puzzles.is_empty() {
        return Err(RlError::Empty);
    }
    let start = Instant::now();
    let mut net = init.clone();
    let mut opt = AdamWState::new(&net.params, AdamWConfig::default().with_lr(cfg.lr));
    let initial_reward = average_reward(&net, puzzles, s, seed, cfg.eval_samples)?;
    let mut working: Vec<usize> = (0..puzzles.len()).collect();
    let mut prev_acc: HashMap<u64, f64> = HashMap::new();
    let mut best: Option<(f64, usize, Denoiser<T>)> = None;
    let mut since_best = 0;
    let mut logs = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        if working.is_empty() {
            break;
        }
        let working_set_size = working.len();
        working.shuffle(&mut stream(seed, domain::RL_SHUFFLE, epoch as u64, 0));
        let mut solved = Vec::new();
        let (mut acc_sum, mut groups) = (0.0, 0usize);
        let (mut obj_sum, mut rounds, mut skipped) = (0.0, 0usize, 0usize);

        for batch in working.chunks(cfg.batch_size) {
            let sizes = if epoch == 1 {
                vec![cfg.g_initial; batch.len()]
            } else {
                let keyed: Vec<(u64, f64)> = batch
                    .iter()
                    .map(|&i| {
                        (
                            puzzles[i].idx,
                            prev_acc.get(&puzzles[i].idx).copied().unwrap_or(0.0),
                        )
                    })
                    .collect();
                assign_group_sizes(&keyed, cfg)?
            };
            let items: Vec<_> = batch
                .iter()
                .zip(&sizes)
                .flat_map(|(&i, &g)| {
                    let p = &puzzles[i];
                    (0..g).map(move |j| (p, rollout_stream(seed, epoch, p.idx, j)))
                })
                .collect();
            let mut trajs = diffusion::rollout_batch(&net, items, s)?;

            let mut advantages = Vec::with_capacity(trajs.len());
            let mut masks = Vec::with_capacity(trajs.len());
            let mut at = 0;
            for (&i, &g) in batch.iter().zip(&sizes) {
                let p = &puzzles[i];
                let mut rewards = Vec::with_capacity(g);
                for tr in &mut trajs[at..at + g] {
                    rewards.push(assign_reward(tr, p)?);
                }
                at += g;
                let rec = GroupRecord::new(p.idx, rewards)?;
                advantages.extend(compute_advantages(&rec.rewards, cfg.std_floor)?);
                masks.extend(std::iter::repeat_n(p.mask.cast::<T>(), g));
                prev_acc.insert(p.idx, rec.acc);
                acc_sum += rec.acc;
                groups += 1;
                if rec.acc == 1.0 {
                    solved.push(i);
                }
            }

            let batch_tr = transitions(&trajs, &advantages, &masks);
            for _ in 0..cfg.inner_epochs {
                match ppo_objective_and_grad(&net, &batch_tr, s, cfg.clip_eps, cfg.grad_chunk) {
                    Ok((obj, mut grads)) => {
                        obj_sum += obj;
                        rounds += 1;
                        // ascend the objective
                        grads.scale(-T::one());
                        opt.step(&mut net.params, &grads)?;
                    }
                    Err(RlError::Divergence) | Err(RlError::Tensor(TensorError::NonFinite(_))) => {
                        skipped += 1;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        working.retain(|i| !solved.contains(i));
        working.sort_unstable();

        let avg = average_reward(&net, puzzles, s, seed, cfg.eval_samples)?;
        let is_best = best.as_ref().is_none_or(|(b, _, _)| avg > *b);
        if is_best {
            best = Some((avg, epoch, net.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        let log = EpochLog {
            epoch,
            working_set_size,
            avg_reward_full_trainset: avg,
            solved_rate: acc_sum / groups.max(1) as f64,
            objective_value: if rounds > 0 {
                obj_sum / rounds as f64
            } else {
                0.0
            },
            skipped_rounds: skipped,
            wallclock_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&log, &net, is_best)?;
        logs.push(log);
        if since_best >= cfg.patience {
            break;
        }
    }
    let (_, best_epoch, best_net) = best.unwrap_or((initial_reward, 0, net.clone()));
    Ok(RlOutcome {
        last: net,
        best: best_net,
        best_epoch,
        initial_reward,
        logs,
    })
}
