//! Exact / hamming / consistent percentages over a prediction set.

use serde::{Deserialize, Serialize};

use super::{CheckMode, DiscreteSolution, PuzzleError, PuzzleInstance, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub count: usize,
    pub exact: f64,
    /// Mean per-instance agreement over non-hint sites.
    pub hamming: f64,
    pub consistent: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shortest: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub connected: Option<f64>,
}

pub fn metrics(
    preds: &[DiscreteSolution],
    puzzles: &[PuzzleInstance],
) -> Result<MetricsReport, PuzzleError> {
    if preds.is_empty() {
        return Err(PuzzleError::EmptySet);
    }
    if preds.len() != puzzles.len() {
        return Err(PuzzleError::ShapeMismatch(format!(
            "{} predictions for {} puzzles",
            preds.len(),
            puzzles.len()
        )));
    }
    let n = preds.len() as f64;
    let (mut exact, mut hamming, mut consistent, mut connected) = (0usize, 0.0, 0usize, 0usize);
    let mut min_cost = false;
    for (pred, p) in preds.iter().zip(puzzles) {
        let gt = p
            .ground_truth
            .as_ref()
            .ok_or(PuzzleError::MissingGroundTruth(p.idx))?;
        exact += usize::from(p.check(pred, CheckMode::GroundTruth)?);
        let free = p.free_sites();
        hamming += if free.is_empty() {
            100.0
        } else {
            100.0 * free.iter().filter(|&&i| pred.site_eq(gt, i)).count() as f64 / free.len() as f64
        };
        consistent += usize::from(p.is_consistent(pred));
        if p.task() == Task::MinCostPath {
            min_cost = true;
            connected += usize::from(p.is_connected(pred));
        }
    }
    let pct = |k: usize| 100.0 * k as f64 / n;
    Ok(MetricsReport {
        count: preds.len(),
        exact: pct(exact),
        hamming: hamming / n,
        consistent: pct(consistent),
        shortest: min_cost.then(|| pct(consistent)),
        connected: min_cost.then(|| pct(connected)),
    })
}
