#![allow(dead_code)]

use diffreason::denoiser::{Denoiser, DenoiserConfig};
use diffreason::puzzles::{generate, GenOptions, PuzzleInstance, Task};
use diffreason::rng::stream;
use diffreason::tensor::{Gradients, ParameterSet};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn small_config(in_channels: usize) -> DenoiserConfig {
    DenoiserConfig {
        in_channels,
        hidden_channels: 8,
        n_blocks: 2,
        kernel_size: 3,
        time_dim: 8,
        groups: 2,
    }
}

/// Fresh init with every parameter jittered, so the zero head and zero
/// biases don't hide gradient paths.
pub fn randomized_net(cfg: DenoiserConfig, seed: u64) -> Denoiser<f64> {
    let mut net = Denoiser::<f64>::new(cfg, &mut stream(seed, 100, 0, 0)).unwrap();
    let mut rng = stream(seed, 101, 0, 0);
    for i in 0..net.params.len() {
        for v in net.params.get_mut(i).data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += 0.2 * z;
        }
    }
    net
}

/// Max over all parameters of |analytic − finite difference| / max(|a|, |fd|, 1e-6).
pub fn max_fd_error(
    params: &ParameterSet<f64>,
    analytic: &Gradients<f64>,
    h: f64,
    f: impl Fn(&ParameterSet<f64>) -> f64,
) -> f64 {
    let mut p = params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        for j in 0..p.get(i).numel() {
            let orig = p.get(i).data()[j];
            let mut at = |d: f64| {
                p.get_mut(i).data_mut()[j] = orig + d;
                f(&p)
            };
            // five-point stencil; the PPO objective is too curved for plain central differences
            let fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            p.get_mut(i).data_mut()[j] = orig;
            let a = analytic.get(i).data()[j];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
        }
    }
    worst
}

pub fn sudoku4(n: u64, seed: u64) -> Vec<PuzzleInstance> {
    (0..n)
        .map(|i| {
            generate(
                Task::Sudoku,
                4,
                &GenOptions::default(),
                i,
                &mut stream(seed, 1, i, 0),
            )
            .unwrap()
        })
        .collect()
}
