use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use diffreason::denoiser::{self, Denoiser, DenoiserConfig};
use diffreason::diffusion::{make_schedule, rollout_batch, sample_greedy_batch, ScheduleKind};
use diffreason::puzzles::{generate, CheckMode, GenOptions, PuzzleInstance, Task};
use diffreason::rng::stream;
use diffreason::tensor::{Graph, Tensor};

fn net(in_channels: usize) -> Denoiser<f32> {
    let cfg = DenoiserConfig {
        in_channels,
        hidden_channels: 32,
        n_blocks: 3,
        kernel_size: 3,
        time_dim: 16,
        groups: 4,
    };
    Denoiser::new(cfg, &mut stream(0, 0, 0, 0)).unwrap()
}

fn puzzles(task: Task, size: usize, n: u64) -> Vec<PuzzleInstance> {
    (0..n)
        .map(|i| {
            generate(
                task,
                size,
                &GenOptions::default(),
                i,
                &mut stream(1, 1, i, 0),
            )
            .unwrap()
        })
        .collect()
}

fn conv(c: &mut Criterion) {
    let net = net(4);
    let x = Tensor::<f32>::zeros(&[64, 4, 4, 4]);
    let ts = vec![10; 64];
    c.bench_function("denoiser forward, batch 64 sudoku4", |b| {
        b.iter(|| black_box(net.predict_noise(&x, &ts).unwrap()))
    });
    c.bench_function("denoiser forward+backward, batch 64 sudoku4", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let w = g.bind(&net.params).unwrap();
            let xi = g.input(x.clone()).unwrap();
            let out = denoiser::forward(&mut g, &w, &net.config, xi, &ts).unwrap();
            let l = g.sum_squares(out).unwrap();
            black_box(g.backward(l, &net.params).unwrap())
        })
    });
}

fn sampling(c: &mut Criterion) {
    let net = net(4);
    let s = make_schedule(20, ScheduleKind::Linear).unwrap();
    let ps = puzzles(Task::Sudoku, 4, 32);
    c.bench_function("32 stochastic rollouts, sudoku4, T=20", |b| {
        b.iter(|| {
            let items = ps
                .iter()
                .enumerate()
                .map(|(k, p)| (p, stream(2, 0, k as u64, 0)))
                .collect();
            black_box(rollout_batch(&net, items, &s).unwrap())
        })
    });
    let refs: Vec<&PuzzleInstance> = ps.iter().collect();
    c.bench_function("32 greedy samples, sudoku4, T=20", |b| {
        b.iter(|| black_box(sample_greedy_batch(&net, &refs, &s, 0).unwrap()))
    });
}

fn checkers(c: &mut Criterion) {
    for (task, size) in [(Task::Sudoku, 9), (Task::Maze, 8), (Task::MinCostPath, 5)] {
        let ps = puzzles(task, size, 16);
        let sols: Vec<_> = ps.iter().map(|p| p.ground_truth.clone().unwrap()).collect();
        c.bench_function(&format!("rule check x16, {task} {size}"), |b| {
            b.iter(|| {
                for (p, s) in ps.iter().zip(&sols) {
                    black_box(p.check(s, CheckMode::Rules).unwrap());
                }
            })
        });
    }
}

criterion_group!(benches, conv, sampling, checkers);
criterion_main!(benches);
