//! File-level behaviour of gen / train / eval / check.

use std::fs;
use std::path::Path;

use diffreason::harness::{
    self, check_files, cmd_eval, cmd_gen, cmd_train_rl, cmd_train_sl, dataset_file, load_split,
    Checkpoint, RunConfig, SlEpochLog, SlOutcome, Split,
};
use diffreason::puzzles::{io, metrics, Task};
use diffreason::rl::EpochLog;
use diffreason::{DenoiserConfig, HarnessError};
use tempfile::TempDir;

fn config(dir: &Path, task: Task, size: usize, count: usize) -> RunConfig {
    let mut cfg = RunConfig {
        task,
        size,
        count,
        dataset: dir.join("data"),
        out: dir.join("out"),
        steps: 5,
        seed: 11,
        ..RunConfig::default()
    };
    cfg.denoiser = DenoiserConfig {
        hidden_channels: 8,
        n_blocks: 1,
        time_dim: 8,
        groups: 2,
        ..cfg.net_config()
    };
    cfg.sl.batch_size = 16;
    cfg.sl.epochs = 3;
    cfg.rl.g_initial = 4;
    cfg.rl.batch_size = 8;
    cfg
}

fn params(net: &diffreason::Denoiser<f32>) -> Vec<Vec<u32>> {
    net.params
        .iter()
        .map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect())
        .collect()
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("bad log line {l:?}: {e}")))
        .collect()
}

#[test]
fn generation_is_deterministic_and_split_as_configured() {
    let dir = TempDir::new().unwrap();
    let a = config(&dir.path().join("a"), Task::Preference, 10, 50);
    let b = config(&dir.path().join("b"), Task::Preference, 10, 50);
    let n = cmd_gen(&a).unwrap();
    assert_eq!((n.train, n.val, n.test), (30, 10, 10));
    cmd_gen(&b).unwrap();
    for split in Split::ALL {
        let fa = fs::read(dataset_file(&a.dataset, a.task, split)).unwrap();
        let fb = fs::read(dataset_file(&b.dataset, b.task, split)).unwrap();
        assert_eq!(fa, fb, "{split:?} differs");
    }
    let test = load_split(&a.dataset, a.task, a.size, Split::Test).unwrap();
    assert_eq!(test.len(), 10);
    // wrong size is refused
    assert!(load_split(&a.dataset, a.task, 9, Split::Test).is_err());

    let mut c = config(dir.path(), Task::Sudoku, 4, 40);
    c.dataset = dir.path().join("s");
    let n = cmd_gen(&c).unwrap();
    assert_eq!((n.train, n.val, n.test), (36, 0, 4));
    assert!(dataset_file(&c.dataset, c.task, Split::Train)
        .extension()
        .is_some_and(|e| e == "txt"));
}

#[test]
fn zero_learning_rate_leaves_parameters_and_val_loss_unchanged() {
    let dir = TempDir::new().unwrap();
    let mut cfg = config(dir.path(), Task::Sudoku, 4, 40);
    cfg.splits = Some([0.6, 0.2, 0.2]);
    cfg.sl.lr = 0.0;
    cmd_gen(&cfg).unwrap();
    let init = SlOutcome::fresh(&cfg).unwrap();
    let out = cmd_train_sl(&cfg, None).unwrap();
    assert_eq!(params(&out.net), params(&init.net));
    let logs: Vec<SlEpochLog> = read_jsonl(&cfg.out.join(harness::train::SL_LOG));
    assert_eq!(logs.len(), 3);
    let v0 = logs[0].val_loss.unwrap();
    assert!(logs.iter().all(|l| l.val_loss == Some(v0)));
    // only strict improvements count
    assert_eq!(out.best, Some((v0, 1)));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = TempDir::new().unwrap();
    let mut full = config(&dir.path().join("full"), Task::Sudoku, 4, 48);
    full.sl.epochs = 4;
    full.sl.lr = 1e-3;
    cmd_gen(&full).unwrap();
    let a = cmd_train_sl(&full, None).unwrap();

    let mut part = full.clone();
    part.out = dir.path().join("part");
    part.sl.epochs = 2;
    cmd_train_sl(&part, None).unwrap();
    part.sl.epochs = 4;
    let b = cmd_train_sl(&part, Some(&part.out.join(harness::train::SL_LAST))).unwrap();

    assert_eq!(params(&a.net), params(&b.net));
    assert_eq!(a.best, b.best);
    let la: Vec<SlEpochLog> = read_jsonl(&full.out.join(harness::train::SL_LOG));
    let lb: Vec<SlEpochLog> = read_jsonl(&part.out.join(harness::train::SL_LOG));
    assert_eq!(la.len(), 4);
    assert_eq!(lb.len(), 4);
    for (x, y) in la.iter().zip(&lb) {
        assert_eq!(
            (x.epoch, x.train_loss, x.val_loss, x.best),
            (y.epoch, y.train_loss, y.val_loss, y.best)
        );
    }
    // an incompatible config is refused
    let mut other = part.clone();
    other.denoiser.hidden_channels = 16;
    other.sl.epochs = 5;
    assert!(cmd_train_sl(&other, Some(&part.out.join(harness::train::SL_LAST))).is_err());
}

#[test]
fn training_loss_falls() {
    let dir = TempDir::new().unwrap();
    let mut cfg = config(dir.path(), Task::Sudoku, 4, 64);
    cfg.sl.epochs = 50;
    cfg.sl.lr = 1e-3;
    cmd_gen(&cfg).unwrap();
    cmd_train_sl(&cfg, None).unwrap();
    let logs: Vec<SlEpochLog> = read_jsonl(&cfg.out.join(harness::train::SL_LOG));
    assert_eq!(logs.len(), 50);
    assert!(logs[0].val_loss.is_none());
    assert!(
        logs[49].train_loss < logs[0].train_loss,
        "{} vs {}",
        logs[49].train_loss,
        logs[0].train_loss
    );
    assert!(cfg.out.join(harness::train::SL_BEST).exists());
}

#[test]
fn rl_writes_one_csv_row_per_epoch() {
    let dir = TempDir::new().unwrap();
    let mut cfg = config(dir.path(), Task::Sudoku, 4, 12);
    cfg.rl.max_epochs = 3;
    cfg.rl.lr = 1e-4;
    cfg.rl.patience = 10;
    cmd_gen(&cfg).unwrap();
    let init = dir.path().join("init.ckpt");
    SlOutcome::fresh(&cfg)
        .unwrap()
        .checkpoint(&cfg)
        .save(&init)
        .unwrap();
    let out = cmd_train_rl(&cfg, &init).unwrap();

    let csv = fs::read_to_string(cfg.out.join(harness::train::REWARD_CSV)).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "epoch,avg_reward");
    assert_eq!(rows.len() - 1, out.logs.len());
    for (row, log) in rows[1..].iter().zip(&out.logs) {
        let (e, r) = row.split_once(',').unwrap();
        assert_eq!(e.parse::<usize>().unwrap(), log.epoch);
        assert_eq!(r.parse::<f64>().unwrap(), log.avg_reward_full_trainset);
    }
    let logs: Vec<EpochLog> = read_jsonl(&cfg.out.join(harness::train::RL_LOG));
    assert_eq!(logs, out.logs);
    let best = Checkpoint::load(&cfg.out.join(harness::train::RL_BEST)).unwrap();
    assert_eq!(
        (best.meta.stage.as_str(), best.meta.epoch),
        ("rl", out.best_epoch)
    );
    assert!(cfg.out.join(harness::train::RL_LAST).exists());
}

#[test]
fn ground_truth_scores_full_marks_and_an_untrained_net_does_not() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), Task::Sudoku, 4, 200);
    cmd_gen(&cfg).unwrap();
    let test = load_split(&cfg.dataset, cfg.task, cfg.size, Split::Test).unwrap();
    let gt: Vec<_> = test
        .iter()
        .map(|p| p.ground_truth.clone().unwrap())
        .collect();
    let m = metrics(&gt, &test).unwrap();
    assert_eq!((m.exact, m.hamming, m.consistent), (100.0, 100.0, 100.0));

    let ck = dir.path().join("fresh.ckpt");
    SlOutcome::fresh(&cfg)
        .unwrap()
        .checkpoint(&cfg)
        .save(&ck)
        .unwrap();
    let path = dataset_file(&cfg.dataset, cfg.task, Split::Test);
    let r = cmd_eval(&ck, &path, 0, false).unwrap();
    assert_eq!(r.metrics.count, 20);
    assert!(r.metrics.consistent <= 10.0, "{}", r.metrics.consistent);
    // fixed seed, identical report
    assert_eq!(
        r.to_json(),
        cmd_eval(&ck, &path, 0, false).unwrap().to_json()
    );
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert!(json["sampler"].as_str().unwrap().contains("greedy"));
}

#[test]
fn maze_cross_evaluation_embeds_smaller_mazes() {
    let dir = TempDir::new().unwrap();
    let big = config(&dir.path().join("big"), Task::Maze, 10, 10);
    let small = config(&dir.path().join("small"), Task::Maze, 5, 10);
    cmd_gen(&small).unwrap();
    let ck = dir.path().join("maze10.ckpt");
    SlOutcome::fresh(&big)
        .unwrap()
        .checkpoint(&big)
        .save(&ck)
        .unwrap();
    let data = dataset_file(&small.dataset, Task::Maze, Split::Test);

    assert!(matches!(
        cmd_eval(&ck, &data, 0, false),
        Err(HarnessError::Mismatch(_))
    ));
    let r = cmd_eval(&ck, &data, 0, true).unwrap();
    assert!(r.embedded && r.cross_eval);
    assert_eq!((r.model_size, r.size), (10, 5));
    assert_eq!(r.metrics.count, 1);
    // path-cost metrics belong to min-cost only
    assert!(r.metrics.shortest.is_none());
}

#[test]
fn check_files_reads_both_formats() {
    let dir = TempDir::new().unwrap();
    for (task, size) in [(Task::Sudoku, 4), (Task::Maze, 5), (Task::MinCostPath, 4)] {
        let mut cfg = config(dir.path(), task, size, 10);
        cfg.dataset = dir.path().join(task.name());
        cmd_gen(&cfg).unwrap();
        let data = dataset_file(&cfg.dataset, task, Split::Train);
        let ps = load_split(&cfg.dataset, task, size, Split::Train).unwrap();
        let sols: String = ps
            .iter()
            .map(|p| io::format_solution(p, p.ground_truth.as_ref().unwrap()) + "\n")
            .collect();
        let f = dir.path().join(format!("{}.sol", task.name()));
        fs::write(&f, sols).unwrap();
        let r = check_files(&data, &f).unwrap();
        assert!(r.all_pass() && r.total == ps.len(), "{task}");
    }
}
