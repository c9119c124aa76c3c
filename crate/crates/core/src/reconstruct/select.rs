use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How the perturbed step `j` is picked. Indices are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "indices")]
pub enum SelectionPolicy {
    /// Uniform over `1..=K`.
    Uniform,
    /// `j ∈ 2..=K-1` with triangular weight peaking at `K/2`; `K = 2` forces `j = 2`.
    #[default]
    MiddleBiased,
    /// Fixed indices; those beyond `K` are an error for that sample.
    Explicit(Vec<usize>),
}

/// Picks the critical step(s) of a `K`-step sample.
///
/// Random policies return one index. Fails with [`Error::InvalidInput`] when
/// `K < 2` or an explicit index is out of range.
pub fn choose_critical_steps<R: Rng + ?Sized>(k: usize, policy: &SelectionPolicy, rng: &mut R) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 steps, got {k}")));
    }
    match policy {
        SelectionPolicy::Uniform => Ok(vec![rng.random_range(1..=k)]),
        SelectionPolicy::MiddleBiased => {
            if k == 2 {
                return Ok(vec![2]);
            }
            let weights = middle_weights(k);
            let dist = WeightedIndex::new(&weights).map_err(|e| Error::InvalidInput(e.to_string()))?;
            Ok(vec![2 + dist.sample(rng)])
        }
        SelectionPolicy::Explicit(indices) => {
            if indices.is_empty() {
                return Err(Error::InvalidInput("explicit policy has no indices".into()));
            }
            if let Some(&bad) = indices.iter().find(|&&j| j == 0 || j > k) {
                return Err(Error::InvalidInput(format!("step {bad} outside 1..={k}")));
            }
            let mut out = indices.clone();
            out.sort_unstable();
            out.dedup();
            Ok(out)
        }
    }
}

/// Weights of `j = 2..=K-1`: `K/2 - |j - K/2|`, which is at least 1 on that range.
pub fn middle_weights(k: usize) -> Vec<f64> {
    let mid = k as f64 / 2.0;
    (2..k).map(|j| mid - (j as f64 - mid).abs()).collect()
}
