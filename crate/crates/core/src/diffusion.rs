//! Noise schedule, forward noising, the masked training loss, and the masked
//! reverse samplers (stochastic with log-densities, and greedy).

use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{self, Denoiser, DenoiserError};
use crate::puzzles::{DiscreteSolution, PuzzleError, PuzzleInstance};
use crate::rng::{domain, stream, StreamRng};
use crate::tensor::{Graph, NodeId, Real, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("timestep {t} outside 1..={steps}")]
    TimestepOutOfRange { t: usize, steps: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("network produced non-finite values")]
    NonFinite,
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Puzzle(#[from] PuzzleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// β linear in t, rescaled from the 1000-step reference range.
    #[default]
    Linear,
}

impl FromStr for ScheduleKind {
    type Err = DiffusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            _ => Err(DiffusionError::InvalidSchedule(format!(
                "unknown kind {s:?}"
            ))),
        }
    }
}

/// Per-step tables, indexed by `t - 1` for `t` in `1..=steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub sigma2: Vec<f64>,
}

pub fn make_schedule(steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule, DiffusionError> {
    if steps < 2 {
        return Err(DiffusionError::InvalidSchedule(format!(
            "{steps} steps, need at least 2"
        )));
    }
    let beta: Vec<f64> = match kind {
        ScheduleKind::Linear => {
            let scale = 1000.0 / steps as f64;
            let (lo, hi) = (1e-4 * scale, 0.02 * scale);
            (0..steps)
                .map(|i| (lo + (hi - lo) * i as f64 / (steps - 1) as f64).min(0.999))
                .collect()
        }
    };
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let alpha_bar = alpha
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule {
        steps,
        sigma2: beta.clone(),
        beta,
        alpha,
        alpha_bar,
    })
}

impl NoiseSchedule {
    pub fn check_t(&self, t: usize) -> Result<usize, DiffusionError> {
        if t == 0 || t > self.steps {
            return Err(DiffusionError::TimestepOutOfRange {
                t,
                steps: self.steps,
            });
        }
        Ok(t - 1)
    }

    /// Coefficients `(a, b)` of `μ = a·x_t − b·ε̂`.
    pub fn mean_coefficients(&self, t: usize) -> Result<(f64, f64), DiffusionError> {
        let i = self.check_t(t)?;
        let a = 1.0 / self.alpha[i].sqrt();
        Ok((a, a * self.beta[i] / (1.0 - self.alpha_bar[i]).sqrt()))
    }
}

fn same_shape<T>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<(), DiffusionError>
where
    T: Real,
{
    if a.shape() != b.shape() {
        return Err(DiffusionError::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
pub fn q_sample<T: Real>(
    x0: &Tensor<T>,
    t: usize,
    eps: &Tensor<T>,
    s: &NoiseSchedule,
) -> Result<Tensor<T>, DiffusionError> {
    same_shape(x0, eps, "q_sample")?;
    let ab = s.alpha_bar[s.check_t(t)?];
    let (a, b) = (T::lit(ab.sqrt()), T::lit((1.0 - ab).sqrt()));
    let data = x0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| a * x + b * e)
        .collect();
    Ok(Tensor::new(x0.shape(), data)?)
}

/// `mask⊙c + (1−mask)⊙x`, taking `c` exactly where the mask is set.
pub fn compose<T: Real>(
    x: &Tensor<T>,
    c: &Tensor<T>,
    mask: &Tensor<T>,
) -> Result<Tensor<T>, DiffusionError> {
    same_shape(x, c, "compose")?;
    same_shape(x, mask, "compose")?;
    let data = x
        .data()
        .iter()
        .zip(c.data())
        .zip(mask.data())
        .map(|((&x, &c), &m)| if m == T::one() { c } else { x })
        .collect();
    Ok(Tensor::new(x.shape(), data)?)
}

/// `μ_t = (x_t − β_t/√(1−ᾱ_t)·ε̂)/√α_t`.
pub fn posterior_mean<T: Real>(
    x_t: &Tensor<T>,
    eps_hat: &Tensor<T>,
    t: usize,
    s: &NoiseSchedule,
) -> Result<Tensor<T>, DiffusionError> {
    same_shape(x_t, eps_hat, "posterior_mean")?;
    let (a, b) = s.mean_coefficients(t)?;
    let (a, b) = (T::lit(a), T::lit(b));
    let data = x_t
        .data()
        .iter()
        .zip(eps_hat.data())
        .map(|(&x, &e)| a * x - b * e)
        .collect();
    Ok(Tensor::new(x_t.shape(), data)?)
}

/// Isotropic Gaussian log-density of `x` around `mean`, summed over free
/// coordinates (`mask == 0`).
pub fn gaussian_log_density<T: Real>(x: &[T], mean: &[T], mask: &[T], sigma2: f64) -> f64 {
    let norm = -0.5 * (2.0 * PI * sigma2).ln();
    let mut total = 0.0;
    for ((&x, &m), &k) in x.iter().zip(mean).zip(mask) {
        if k != T::one() {
            let d = x.as_f64() - m.as_f64();
            total += norm - d * d / (2.0 * sigma2);
        }
    }
    total
}

#[derive(Debug, Clone)]
pub struct SampleStepOutput<T> {
    pub x_prev: Tensor<T>,
    /// Zero at `t = 1`, where the step is deterministic.
    pub log_density: f64,
    pub mean: Tensor<T>,
    /// Zero at `t = 1`.
    pub variance: f64,
}

/// One reverse step for a batch: `x_t`, `c`, `mask` are `[N,C,H,W]` and
/// `rngs[i]` drives sample `i`. Noise is drawn for free coordinates only, in
/// row-major order; `rngs` may be empty when `t == 1`.
pub fn sample_step_batch<T: Real>(
    net: &Denoiser<T>,
    x_t: &Tensor<T>,
    t: usize,
    c: &Tensor<T>,
    mask: &Tensor<T>,
    s: &NoiseSchedule,
    rngs: &mut [StreamRng],
) -> Result<Vec<SampleStepOutput<T>>, DiffusionError> {
    let i = s.check_t(t)?;
    let n = x_t.batch();
    let x_in = compose(x_t, c, mask)?;
    let eps_hat = net.predict_noise(&x_in, &vec![t; n])?;
    if !eps_hat.is_finite() {
        return Err(DiffusionError::NonFinite);
    }
    let mean = posterior_mean(&x_in, &eps_hat, t, s)?;
    let per = x_t.numel() / n;
    let sample_shape = &x_t.shape()[1..];
    let sigma2 = s.sigma2[i];
    let sigma = T::lit(sigma2.sqrt());
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let (mu, cs, ms) = (mean.sample(k), c.sample(k), mask.sample(k));
        let mut x = Vec::with_capacity(per);
        for j in 0..per {
            x.push(if ms[j] == T::one() {
                cs[j]
            } else if t == 1 {
                mu[j]
            } else {
                let z: f64 = StandardNormal.sample(&mut rngs[k]);
                mu[j] + sigma * T::lit(z)
            });
        }
        let (log_density, variance) = if t == 1 {
            (0.0, 0.0)
        } else {
            (gaussian_log_density(&x, mu, ms, sigma2), sigma2)
        };
        out.push(SampleStepOutput {
            x_prev: Tensor::new(sample_shape, x)?,
            log_density,
            mean: Tensor::new(sample_shape, mu.to_vec())?,
            variance,
        });
    }
    Ok(out)
}

/// Single-sample [`sample_step_batch`] on `[C,H,W]` tensors.
pub fn sample_step<T: Real>(
    net: &Denoiser<T>,
    x_t: &Tensor<T>,
    t: usize,
    c: &Tensor<T>,
    mask: &Tensor<T>,
    s: &NoiseSchedule,
    rng: &mut StreamRng,
) -> Result<SampleStepOutput<T>, DiffusionError> {
    let b = |x: &Tensor<T>| Tensor::stack(&[x]);
    let mut rngs = [rng.clone()];
    let mut out = sample_step_batch(net, &b(x_t)?, t, &b(c)?, &b(mask)?, s, &mut rngs)?;
    *rng = rngs[0].clone();
    Ok(out.pop().expect("one sample"))
}

/// `x_T`: `c` on masked coordinates, standard normal elsewhere.
pub fn initial_state<T: Real>(c: &Tensor<T>, mask: &Tensor<T>, rng: &mut StreamRng) -> Tensor<T> {
    let data = c
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&c, &m)| {
            if m == T::one() {
                c
            } else {
                let z: f64 = StandardNormal.sample(rng);
                T::lit(z)
            }
        })
        .collect();
    Tensor::new(c.shape(), data).expect("shape of c")
}

/// Stochastic denoising chain for one puzzle.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub idx: u64,
    /// `x_T, x_{T-1}, …, x_0`.
    pub states: Vec<Tensor<T>>,
    /// `log_probs[k]` is the log-density of the transition out of `states[k]`,
    /// i.e. at timestep `T - k`.
    pub log_probs: Vec<f64>,
    pub reward: Option<f64>,
}

impl<T: Real> Trajectory<T> {
    pub fn steps(&self) -> usize {
        self.log_probs.len()
    }

    /// `x_t` for `t` in `0..=T`.
    pub fn state(&self, t: usize) -> &Tensor<T> {
        &self.states[self.steps() - t]
    }

    pub fn x0(&self) -> &Tensor<T> {
        self.states.last().expect("non-empty trajectory")
    }
}

/// Puzzle encodings converted to the working precision.
pub(crate) fn puzzle_tensors<T: Real>(p: &PuzzleInstance) -> (Tensor<T>, Tensor<T>) {
    (p.c.cast(), p.mask.cast())
}

/// Trajectories processed together in one network batch. Fixed so results
/// never depend on the thread count.
pub const ROLLOUT_CHUNK: usize = 64;

fn run_chain<T: Real>(
    net: &Denoiser<T>,
    puzzles: &[&PuzzleInstance],
    mut rngs: Vec<StreamRng>,
    s: &NoiseSchedule,
    stochastic: bool,
) -> Result<Vec<Trajectory<T>>, DiffusionError> {
    let (cs, ms): (Vec<Tensor<T>>, Vec<Tensor<T>>) =
        puzzles.iter().map(|p| puzzle_tensors(p)).unzip();
    let c = Tensor::stack(&cs.iter().collect::<Vec<_>>())?;
    let m = Tensor::stack(&ms.iter().collect::<Vec<_>>())?;
    let x_t: Vec<Tensor<T>> = (0..puzzles.len())
        .map(|k| initial_state(&cs[k], &ms[k], &mut rngs[k]))
        .collect();
    let mut trajs: Vec<Trajectory<T>> = puzzles
        .iter()
        .zip(x_t)
        .map(|(p, x)| Trajectory {
            idx: p.idx,
            states: vec![x],
            log_probs: Vec::with_capacity(s.steps),
            reward: None,
        })
        .collect();
    for t in (1..=s.steps).rev() {
        let xs = Tensor::stack(
            &trajs
                .iter()
                .map(|tr| tr.states.last().unwrap())
                .collect::<Vec<_>>(),
        )?;
        let steps = if stochastic {
            sample_step_batch(net, &xs, t, &c, &m, s, &mut rngs)?
        } else {
            greedy_step(net, &xs, t, &c, &m, s)?
        };
        for (tr, st) in trajs.iter_mut().zip(steps) {
            tr.states.push(st.x_prev);
            tr.log_probs.push(st.log_density);
        }
    }
    Ok(trajs)
}

fn greedy_step<T: Real>(
    net: &Denoiser<T>,
    x_t: &Tensor<T>,
    t: usize,
    c: &Tensor<T>,
    m: &Tensor<T>,
    s: &NoiseSchedule,
) -> Result<Vec<SampleStepOutput<T>>, DiffusionError> {
    let n = x_t.batch();
    let x_in = compose(x_t, c, m)?;
    let eps_hat = net.predict_noise(&x_in, &vec![t; n])?;
    let mean = posterior_mean(&x_in, &eps_hat, t, s)?;
    let next = compose(&mean, c, m)?;
    let shape = &x_t.shape()[1..];
    (0..n)
        .map(|k| {
            let x = Tensor::new(shape, next.sample(k).to_vec())?;
            Ok(SampleStepOutput {
                mean: x.clone(),
                x_prev: x,
                log_density: 0.0,
                variance: 0.0,
            })
        })
        .collect()
}

/// Stochastic rollouts, one per `(puzzle, rng)` pair, batched in fixed chunks
/// and run in parallel. Output order matches input order.
pub fn rollout_batch<T: Real>(
    net: &Denoiser<T>,
    items: Vec<(&PuzzleInstance, StreamRng)>,
    s: &NoiseSchedule,
) -> Result<Vec<Trajectory<T>>, DiffusionError> {
    let chunks: Vec<Vec<(&PuzzleInstance, StreamRng)>> = chunked(items, ROLLOUT_CHUNK);
    let done: Result<Vec<Vec<Trajectory<T>>>, DiffusionError> = chunks
        .into_par_iter()
        .map(|chunk| {
            let (ps, rngs): (Vec<&PuzzleInstance>, Vec<StreamRng>) = chunk.into_iter().unzip();
            run_chain(net, &ps, rngs, s, true)
        })
        .collect();
    Ok(done?.into_iter().flatten().collect())
}

pub fn rollout<T: Real>(
    net: &Denoiser<T>,
    puzzle: &PuzzleInstance,
    s: &NoiseSchedule,
    rng: StreamRng,
) -> Result<Trajectory<T>, DiffusionError> {
    Ok(rollout_batch(net, vec![(puzzle, rng)], s)?
        .pop()
        .expect("one trajectory"))
}

fn chunked<I>(items: Vec<I>, size: usize) -> Vec<Vec<I>> {
    let mut out = Vec::new();
    let mut it = items.into_iter().peekable();
    while it.peek().is_some() {
        out.push(it.by_ref().take(size).collect());
    }
    out
}

/// Stream for the greedy sampler's `x_T`, derived from the puzzle id.
pub fn greedy_rng(seed: u64, idx: u64) -> StreamRng {
    stream(seed, domain::GREEDY_START, idx, 0)
}

/// Deterministic inference: propagate the posterior mean from a seeded `x_T`.
pub fn sample_greedy_batch<T: Real>(
    net: &Denoiser<T>,
    puzzles: &[&PuzzleInstance],
    s: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<(Tensor<T>, DiscreteSolution)>, DiffusionError> {
    let chunks = chunked(puzzles.to_vec(), ROLLOUT_CHUNK);
    let done: Result<Vec<Vec<(Tensor<T>, DiscreteSolution)>>, DiffusionError> = chunks
        .into_par_iter()
        .map(|ps| {
            let rngs = ps.iter().map(|p| greedy_rng(seed, p.idx)).collect();
            let trajs = run_chain(net, &ps, rngs, s, false)?;
            trajs
                .into_iter()
                .zip(&ps)
                .map(|(tr, p)| {
                    let x0 = tr.x0().clone();
                    let sol = p.discretize(&x0.cast())?;
                    Ok((x0, sol))
                })
                .collect()
        })
        .collect();
    Ok(done?.into_iter().flatten().collect())
}

pub fn sample_greedy<T: Real>(
    net: &Denoiser<T>,
    puzzle: &PuzzleInstance,
    s: &NoiseSchedule,
    seed: u64,
) -> Result<(Tensor<T>, DiscreteSolution), DiffusionError> {
    Ok(sample_greedy_batch(net, &[puzzle], s, seed)?
        .pop()
        .expect("one result"))
}

/// One supervised example: clean solution tensor plus its encoding, a
/// timestep and the noise draw.
#[derive(Debug, Clone)]
pub struct SlExample<T> {
    pub x0: Tensor<T>,
    pub c: Tensor<T>,
    pub mask: Tensor<T>,
    pub t: usize,
    pub eps: Tensor<T>,
}

impl<T: Real> SlExample<T> {
    /// Draws `t ~ U{1..T}` and `ε ~ N(0, I)`.
    pub fn draw<R: Rng>(
        p: &PuzzleInstance,
        x0: &Tensor<f64>,
        s: &NoiseSchedule,
        rng: &mut R,
    ) -> Self {
        let t = rng.random_range(1..=s.steps);
        let eps: Vec<f64> = (0..x0.numel())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        Self {
            x0: x0.cast(),
            c: p.c.cast(),
            mask: p.mask.cast(),
            t,
            eps: Tensor::from_f64(x0.shape(), &eps).expect("shape of x0"),
        }
    }
}

/// Records the masked noise-prediction loss for a batch on `g`, scaled by
/// `1 / denom` so that per-chunk graphs sum to the full-batch mean. With
/// `denom = None` the chunk's own free-coordinate count is used.
pub fn sl_loss_graph<T: Real>(
    g: &mut Graph<T>,
    w: &[NodeId],
    net: &Denoiser<T>,
    batch: &[SlExample<T>],
    s: &NoiseSchedule,
    denom: Option<usize>,
) -> Result<NodeId, DiffusionError> {
    let mut x_in = Vec::with_capacity(batch.len());
    let mut free = Vec::with_capacity(batch.len());
    for ex in batch {
        same_shape(&ex.x0, &ex.c, "sl_loss")?;
        same_shape(&ex.x0, &ex.mask, "sl_loss")?;
        let x_t = q_sample(&ex.x0, ex.t, &ex.eps, s)?;
        x_in.push(compose(&x_t, &ex.c, &ex.mask)?);
        free.push(ex.mask.map(|m| T::one() - m));
    }
    let stack = |v: &[Tensor<T>]| Tensor::stack(&v.iter().collect::<Vec<_>>());
    let eps = stack(&batch.iter().map(|e| e.eps.clone()).collect::<Vec<_>>())?;
    let free = stack(&free)?;
    let n_free = free.data().iter().filter(|&&f| f == T::one()).count();
    let ts: Vec<usize> = batch.iter().map(|e| e.t).collect();
    let x = g.input(stack(&x_in)?)?;
    let eps_hat = denoiser::forward(g, w, &net.config, x, &ts)?;
    let eps = g.input(eps)?;
    let free = g.input(free)?;
    let d = g.sub(eps_hat, eps)?;
    let d = g.mul(d, free)?;
    let sq = g.sum_squares(d)?;
    let denom = denom.unwrap_or(n_free).max(1);
    Ok(g.scale(sq, T::lit(1.0 / denom as f64))?)
}

/// Free-coordinate count of a batch.
pub fn free_count<T: Real>(batch: &[SlExample<T>]) -> usize {
    batch
        .iter()
        .map(|e| e.mask.data().iter().filter(|&&m| m != T::one()).count())
        .sum()
}

/// Loss value only.
pub fn sl_loss<T: Real>(
    net: &Denoiser<T>,
    batch: &[SlExample<T>],
    s: &NoiseSchedule,
) -> Result<f64, DiffusionError> {
    let mut g = Graph::new();
    let w = g.bind(&net.params)?;
    let loss = sl_loss_graph(&mut g, &w, net, batch, s, None)?;
    Ok(g.value(loss).data()[0].as_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;

    fn sched() -> NoiseSchedule {
        make_schedule(20, ScheduleKind::Linear).unwrap()
    }

    #[test]
    fn default_schedule_shape() {
        let s = sched();
        assert!(s.alpha_bar[19] < s.alpha_bar[0] && s.alpha_bar[0] < 1.0);
        assert!(s.beta.windows(2).all(|w| w[0] <= w[1]));
        assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar[19] < 0.01);
        assert_eq!(s.beta[19], 0.999);
        let two = make_schedule(2, ScheduleKind::Linear).unwrap();
        assert_eq!(
            (two.beta.len(), two.alpha_bar.len(), two.sigma2.len()),
            (2, 2, 2)
        );
        assert!(make_schedule(1, ScheduleKind::Linear).is_err());
        assert!("cosine".parse::<ScheduleKind>().is_err());
    }

    #[test]
    fn q_sample_limits() {
        let s = sched();
        let x0 = Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap();
        let zero = Tensor::<f64>::zeros(&[3]);
        let x = q_sample(&x0, 5, &zero, &s).unwrap();
        let k = s.alpha_bar[4].sqrt();
        assert_eq!(x.data(), &[k, -2.0 * k, 0.5 * k]);
        let e = Tensor::from_f64(&[3], &[1.0, 0.0, 0.0]).unwrap();
        let x = q_sample(&zero, 5, &e, &s).unwrap();
        assert_eq!(x.data()[0], (1.0 - s.alpha_bar[4]).sqrt());
        assert!(q_sample(&x0, 21, &e, &s).is_err());
        assert!(q_sample(&x0, 0, &e, &s).is_err());
    }

    #[test]
    fn posterior_mean_with_zero_noise() {
        let s = sched();
        let x = Tensor::from_f64(&[2], &[0.3, -1.0]).unwrap();
        let m = posterior_mean(&x, &Tensor::<f64>::zeros(&[2]), 3, &s).unwrap();
        let a = s.alpha[2].sqrt();
        for (got, want) in m.data().iter().zip([0.3 / a, -1.0 / a]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn density_normalization() {
        let sigma2 = 1.0 / (2.0 * PI);
        let v = gaussian_log_density(&[0.7f64], &[0.7], &[0.0], sigma2);
        assert!(v.abs() < 1e-15);
        assert_eq!(gaussian_log_density(&[5.0f64], &[0.7], &[1.0], sigma2), 0.0);
    }

    #[test]
    fn fully_masked_step_copies_hints() {
        let cfg = DenoiserConfig {
            in_channels: 1,
            hidden_channels: 4,
            n_blocks: 1,
            kernel_size: 3,
            time_dim: 4,
            groups: 2,
        };
        let net: Denoiser<f64> = Denoiser::new(cfg, &mut stream(0, 0, 0, 0)).unwrap();
        let c = Tensor::from_f64(&[1, 2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let mask = Tensor::ones(&[1, 2, 2]);
        let x = Tensor::zeros(&[1, 2, 2]);
        let out = sample_step(&net, &x, 7, &c, &mask, &sched(), &mut stream(0, 0, 0, 0)).unwrap();
        assert_eq!(out.x_prev.data(), c.data());
        assert_eq!(out.log_density, 0.0);
    }
}
