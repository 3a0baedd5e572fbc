use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use diffreason::harness::{dataset_file, load_split, RunConfig, SlOutcome, Split};
use diffreason::puzzles::{io, Task};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffreason"))
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("terminated by signal")
}

fn gen_sudoku(dir: &Path) -> Vec<String> {
    let data = dir.join("data");
    let o = run(&[
        "gen",
        "--task",
        "sudoku",
        "--size",
        "4",
        "--count",
        "20",
        "--seed",
        "3",
        "--dataset",
        data.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    load_split(&data, Task::Sudoku, 4, Split::Test)
        .unwrap()
        .iter()
        .map(|p| io::format_solution(p, p.ground_truth.as_ref().unwrap()))
        .collect()
}

fn check(dir: &Path, dataset: &Path, sols: &str) -> Output {
    let f = dir.join("sols.txt");
    fs::write(&f, sols).unwrap();
    run(&[
        "check",
        "--task",
        "sudoku",
        "--dataset",
        dataset.to_str().unwrap(),
        "--solutions",
        f.to_str().unwrap(),
    ])
}

#[test]
fn check_exit_codes() {
    let dir = TempDir::new().unwrap();
    let lines = gen_sudoku(dir.path());
    let data = dir.path().join("data");
    assert_eq!(lines.len(), 2);

    // a directory resolves to its test split
    let ok = check(dir.path(), &data, &lines.join("\n"));
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("2/2 consistent"));

    let mut bad = lines.clone();
    let first = if bad[1].starts_with('1') { "2" } else { "1" };
    bad[1].replace_range(0..1, first);
    let o = check(dir.path(), &data, &bad.join("\n"));
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("1 line 2 FAIL"));

    let empty = dir.path().join("empty.txt");
    fs::write(&empty, "").unwrap();
    assert_eq!(code(&check(dir.path(), &empty, "")), 2);

    let o = check(dir.path(), &data, &format!("{}\nnot a board", lines[0]));
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    // too few lines is malformed too
    assert_eq!(code(&check(dir.path(), &data, &lines[0])), 3);
}

#[test]
fn eval_refuses_mismatched_data_unless_cross_eval() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("mazes");
    let o = run(&[
        "gen",
        "--task",
        "maze",
        "--size",
        "5",
        "--count",
        "10",
        "--dataset",
        data.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let cfg = RunConfig {
        task: Task::Maze,
        size: 7,
        steps: 4,
        ..RunConfig::default()
    };
    let ck = dir.path().join("maze7.ckpt");
    SlOutcome::fresh(&cfg)
        .unwrap()
        .checkpoint(&cfg)
        .save(&ck)
        .unwrap();
    let file = dataset_file(&data, Task::Maze, Split::Test);
    let report = dir.path().join("report.json");
    let args = |extra: &[&str]| {
        let mut v = vec![
            "eval",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--dataset",
            file.to_str().unwrap(),
            "--report",
            report.to_str().unwrap(),
        ];
        v.extend_from_slice(extra);
        run(&v)
    };
    let o = args(&[]);
    assert_ne!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--cross-eval"));
    assert!(!report.exists());

    let o = args(&["--cross-eval"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["embedded"], true);
    assert_eq!(r["steps"], 4);
}

#[test]
fn bad_arguments_fail_cleanly() {
    assert_ne!(code(&run(&["frobnicate"])), 0);
    let o = run(&[
        "gen",
        "--task",
        "sudoku",
        "--size",
        "5",
        "--count",
        "1",
        "--dataset",
        "/nonexistent/x",
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}
