use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use diffreason::harness::{self, data, Split};
use diffreason::puzzles::{PuzzleError, Task};
use diffreason::{HarnessError, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "diffreason",
    version,
    about = "Diffusion reasoner for constraint puzzles"
)]
struct Cli {
    /// JSON run configuration; flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for checkpoints, logs and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset directory (or a single dataset file for eval/check).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    task: Option<Task>,
    /// Sudoku side, maze/grid side, or item count.
    #[arg(long, global = true)]
    size: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate train/val/test split files.
    Gen {
        #[arg(long)]
        count: Option<usize>,
        /// Sudoku hint count.
        #[arg(long)]
        hints: Option<usize>,
    },
    /// Supervised denoising training.
    TrainSl {
        /// Continue from this SL checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// RL fine-tuning from an SL checkpoint.
    TrainRl {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Greedy evaluation of a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Allow task/size mismatch (mazes are embedded in the model's frame).
        #[arg(long)]
        cross_eval: bool,
        /// Where to write the JSON report; defaults to <out>/eval_report.json.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Verify a solutions file against a dataset file.
    Check {
        #[arg(long)]
        solutions: PathBuf,
    },
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(d) = &cli.dataset {
        cfg.dataset = d.clone();
    }
    if let Some(t) = cli.task {
        cfg.task = t;
    }
    if let Some(s) = cli.size {
        cfg.size = s;
    }
    if let Cmd::Gen { count, hints } = &cli.cmd {
        if let Some(c) = count {
            cfg.count = *c;
        }
        if hints.is_some() {
            cfg.gen.hints = *hints;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// A dataset argument may name a file or a split directory; directories
/// resolve to their test split.
fn dataset_path(path: &Path, task: Task) -> PathBuf {
    if path.is_dir() {
        data::dataset_file(path, task, Split::Test)
    } else {
        path.to_path_buf()
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let cfg = config(cli)?;
    match &cli.cmd {
        Cmd::Gen { .. } => {
            let n = harness::cmd_gen(&cfg)?;
            println!(
                "{} {}: {} train / {} val / {} test -> {}",
                cfg.task,
                cfg.size,
                n.train,
                n.val,
                n.test,
                cfg.dataset.display()
            );
        }
        Cmd::TrainSl { checkpoint } => {
            let st = harness::cmd_train_sl(&cfg, checkpoint.as_deref())?;
            match st.best {
                Some((m, e)) => println!(
                    "SL done after epoch {}; best loss {m:.6} at epoch {e}",
                    st.epoch
                ),
                None => println!("SL: nothing to do (already at epoch {})", st.epoch),
            }
        }
        Cmd::TrainRl { checkpoint } => {
            let out = harness::cmd_train_rl(&cfg, checkpoint)?;
            let last = out
                .logs
                .last()
                .map_or(out.initial_reward, |l| l.avg_reward_full_trainset);
            println!(
                "RL done after {} epochs; reward {:.4} -> {:.4}, best epoch {}",
                out.logs.len(),
                out.initial_reward,
                last,
                out.best_epoch
            );
        }
        Cmd::Eval {
            checkpoint,
            cross_eval,
            report,
        } => {
            let ck = harness::Checkpoint::load(checkpoint)?;
            let path = dataset_path(
                &cfg.dataset,
                if *cross_eval { cfg.task } else { ck.meta.task },
            );
            let r = harness::cmd_eval(checkpoint, &path, cfg.seed, *cross_eval)
                .with_context(|| format!("evaluating on {}", path.display()))?;
            let m = &r.metrics;
            println!("# sampler: {}", r.sampler);
            println!(
                "n={} exact={:.2} hamming={:.2} consistent={:.2}",
                m.count, m.exact, m.hamming, m.consistent
            );
            if let (Some(s), Some(c)) = (m.shortest, m.connected) {
                println!("shortest={s:.2} connected={c:.2}");
            }
            let dest = report
                .clone()
                .unwrap_or_else(|| cfg.out.join("eval_report.json"));
            if let Some(dir) = dest.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            harness::write_atomic(&dest, r.to_json().as_bytes())?;
        }
        Cmd::Check { solutions } => return check(&cfg, solutions),
    }
    Ok(ExitCode::SUCCESS)
}

const CHECK_FAIL: u8 = 1;
const CHECK_EMPTY: u8 = 2;
const CHECK_MALFORMED: u8 = 3;

fn check(cfg: &RunConfig, solutions: &Path) -> Result<ExitCode> {
    let dataset = dataset_path(&cfg.dataset, cfg.task);
    let r = match harness::check_files(&dataset, solutions) {
        Ok(r) => r,
        Err(e @ (HarnessError::Puzzle(PuzzleError::Parse { .. }) | HarnessError::Mismatch(_))) => {
            eprintln!("malformed input: {e}");
            return Ok(ExitCode::from(CHECK_MALFORMED));
        }
        Err(e) => bail!(e),
    };
    for o in &r.results {
        println!(
            "{} line {} {}",
            o.index,
            o.line,
            if o.pass { "pass" } else { "FAIL" }
        );
    }
    println!("{}/{} consistent", r.passed, r.total);
    let code = if r.total == 0 {
        CHECK_EMPTY
    } else if r.all_pass() {
        0
    } else {
        CHECK_FAIL
    };
    Ok(ExitCode::from(code))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            // keep 1 and 2 unambiguous for `check`
            ExitCode::from(if matches!(cli.cmd, Cmd::Check { .. }) {
                CHECK_MALFORMED
            } else {
                1
            })
        }
    }
}
