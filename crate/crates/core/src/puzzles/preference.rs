//! Completing a partial ranking of items.

use rand::Rng;
use rand_distr::{Distribution, Gumbel};

use super::PuzzleError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferencePuzzle {
    /// Rank (1-based) per item when given, `None` when it must be predicted.
    pub given: Vec<Option<u8>>,
}

impl PreferencePuzzle {
    pub fn new(given: Vec<Option<u8>>) -> Result<Self, PuzzleError> {
        let n = given.len();
        if !(2..=32).contains(&n) {
            return Err(PuzzleError::InvalidPayload(format!(
                "{n} items unsupported"
            )));
        }
        let mut seen = vec![false; n + 1];
        for r in given.iter().flatten() {
            let r = *r as usize;
            if r == 0 || r > n || seen[r] {
                return Err(PuzzleError::InvalidPayload(format!(
                    "given rank {r} invalid or repeated"
                )));
            }
            seen[r] = true;
        }
        Ok(Self { given })
    }

    pub fn n_items(&self) -> usize {
        self.given.len()
    }

    fn missing_ranks(&self) -> Vec<u8> {
        let n = self.n_items();
        (1..=n as u8)
            .filter(|r| !self.given.contains(&Some(*r)))
            .collect()
    }

    /// Every assignment of the missing ranks to the free items, in
    /// lexicographic order of the free items' ranks.
    pub fn solve(&self, cap: usize) -> Result<Vec<Vec<u8>>, PuzzleError> {
        let free: Vec<usize> = (0..self.n_items())
            .filter(|&i| self.given[i].is_none())
            .collect();
        let ranks = self.missing_ranks();
        let mut used = vec![false; ranks.len()];
        let mut current: Vec<u8> = self.given.iter().map(|r| r.unwrap_or(0)).collect();
        let mut found = Vec::new();
        fn rec(
            k: usize,
            free: &[usize],
            ranks: &[u8],
            used: &mut [bool],
            current: &mut Vec<u8>,
            found: &mut Vec<Vec<u8>>,
            cap: usize,
        ) -> bool {
            if k == free.len() {
                if found.len() == cap {
                    return true;
                }
                found.push(current.clone());
                return false;
            }
            for j in 0..ranks.len() {
                if used[j] {
                    continue;
                }
                used[j] = true;
                current[free[k]] = ranks[j];
                let stop = rec(k + 1, free, ranks, used, current, found, cap);
                used[j] = false;
                if stop {
                    return true;
                }
            }
            false
        }
        if rec(0, &free, &ranks, &mut used, &mut current, &mut found, cap) {
            return Err(PuzzleError::CapExceeded { cap });
        }
        Ok(found)
    }
}

/// Rule check: the ranks are a permutation of `1..=n` agreeing with the given ones.
pub fn is_valid_ranking(p: &PreferencePuzzle, ranks: &[u8]) -> bool {
    let n = p.n_items();
    if ranks.len() != n {
        return false;
    }
    let mut seen = vec![false; n + 1];
    for (i, &r) in ranks.iter().enumerate() {
        let ri = r as usize;
        if ri == 0 || ri > n || seen[ri] {
            return false;
        }
        if p.given[i].is_some_and(|g| g != r) {
            return false;
        }
        seen[ri] = true;
    }
    true
}

/// Draws a full ranking from a Plackett–Luce population whose item
/// utilities decrease linearly with item index, then reveals the first
/// `n_given` items' ranks. `noise` scales the Gumbel perturbation.
pub fn generate<R: Rng>(
    n_items: usize,
    n_given: usize,
    noise: f64,
    rng: &mut R,
) -> Result<(PreferencePuzzle, Vec<u8>), PuzzleError> {
    if n_given >= n_items || noise <= 0.0 {
        return Err(PuzzleError::Infeasible(format!(
            "{n_given} given of {n_items} items with noise {noise}"
        )));
    }
    let gumbel = Gumbel::new(0.0, noise).map_err(|e| PuzzleError::Infeasible(e.to_string()))?;
    let scores: Vec<f64> = (0..n_items)
        .map(|i| (n_items - i) as f64 / n_items as f64 * 3.0 + gumbel.sample(rng))
        .collect();
    let mut order: Vec<usize> = (0..n_items).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = vec![0u8; n_items];
    for (pos, &item) in order.iter().enumerate() {
        ranks[item] = pos as u8 + 1;
    }
    let given = (0..n_items)
        .map(|i| (i < n_given).then_some(ranks[i]))
        .collect();
    Ok((PreferencePuzzle::new(given)?, ranks))
}
