//! The JSON run description shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::denoiser::DenoiserConfig;
use crate::diffusion::{make_schedule, NoiseSchedule, ScheduleKind};
use crate::puzzles::{GenOptions, Task};
use crate::rl::RlConfig;
use crate::tensor::AdamWConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Examples per gradient graph; chunks run in parallel.
    pub grad_chunk: usize,
}

impl Default for SlConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr: 3e-5,
            weight_decay: AdamWConfig::default().weight_decay,
            epochs: 100,
            grad_chunk: 16,
        }
    }
}

impl SlConfig {
    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub task: Task,
    pub size: usize,
    /// Instances written by `gen`, before splitting.
    pub count: usize,
    pub gen: GenOptions,
    /// Directory holding `train`, `val` and `test` files.
    pub dataset: PathBuf,
    /// Train / validation / test fractions; `None` picks the task default.
    pub splits: Option<[f64; 3]>,
    pub steps: usize,
    pub schedule: ScheduleKind,
    /// `in_channels` is overwritten from the task.
    pub denoiser: DenoiserConfig,
    pub sl: SlConfig,
    pub rl: RlConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Sudoku,
            size: 4,
            count: 1000,
            gen: GenOptions::default(),
            dataset: PathBuf::from("data"),
            splits: None,
            steps: 20,
            schedule: ScheduleKind::Linear,
            denoiser: DenoiserConfig::default(),
            sl: SlConfig::default(),
            rl: RlConfig::default(),
            seed: 0,
            out: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn split_fractions(&self) -> [f64; 3] {
        self.splits.unwrap_or(match self.task {
            Task::Sudoku | Task::Maze | Task::MinCostPath => [0.9, 0.0, 0.1],
            Task::SimplePath | Task::Preference => [0.6, 0.2, 0.2],
        })
    }

    /// The denoiser config with the input width fixed by the task.
    pub fn net_config(&self) -> DenoiserConfig {
        DenoiserConfig {
            in_channels: self.task.channels(self.size),
            ..self.denoiser.clone()
        }
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule, HarnessError> {
        Ok(make_schedule(self.steps, self.schedule)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let f = self.split_fractions();
        if f.iter().any(|x| !(0.0..=1.0).contains(x)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!(
                "split fractions {f:?} must be in [0, 1] and sum to 1"
            ));
        }
        if self.sl.batch_size == 0 || self.sl.grad_chunk == 0 {
            return bad("SL batch size and gradient chunk must be positive".into());
        }
        if !(self.sl.lr >= 0.0) {
            return bad("SL learning rate must be non-negative".into());
        }
        self.net_config().validate()?;
        self.rl.validate()?;
        self.noise_schedule()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_fills_defaults() {
        let c: RunConfig =
            serde_json::from_str(r#"{"task":"maze","size":6,"sl":{"epochs":3}}"#).unwrap();
        assert_eq!(
            (c.task, c.size, c.sl.epochs, c.sl.lr),
            (Task::Maze, 6, 3, 3e-5)
        );
        assert_eq!(c.split_fractions(), [0.9, 0.0, 0.1]);
        assert_eq!(c.net_config().in_channels, 2);
        c.validate().unwrap();
        let back: RunConfig = serde_json::from_value(c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bad_splits_rejected() {
        let c = RunConfig {
            splits: Some([0.5, 0.2, 0.2]),
            ..RunConfig::default()
        };
        assert!(matches!(c.validate(), Err(HarnessError::Config(_))));
        let p = RunConfig {
            task: Task::Preference,
            size: 10,
            ..RunConfig::default()
        };
        assert_eq!(p.split_fractions(), [0.6, 0.2, 0.2]);
    }
}
