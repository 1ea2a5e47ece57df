//! Batch composition: trivial pairs plus whole hard-negative candidate sets.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SeedPath;

/// A candidate set usable as a hard-negative group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnSource {
    pub case_id: String,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnItem {
    pub case_id: String,
    pub candidate: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSpec {
    /// Indices into the trivial pool.
    pub trivial: Vec<usize>,
    pub hard_negatives: Vec<HnItem>,
}

/// Draw `n_t` trivial indices from a pool of `trivial_pool` pairs and fill
/// exactly `n_hn` hard-negative slots with whole candidate sets.
///
/// Sets are visited in a seeded shuffle and taken whenever the remaining
/// slots can still be filled exactly by later sets. A set is never split.
pub fn build_hn_batch(
    sources: &[HnSource],
    trivial_pool: usize,
    n_t: usize,
    n_hn: usize,
    seed: u64,
) -> Result<BatchSpec> {
    if trivial_pool < n_t {
        return Err(Error::PoolExhausted(format!(
            "trivial pool has {trivial_pool} pairs, batch needs {n_t}"
        )));
    }
    let mut rng = SeedPath::root(seed).push("trivial", 0).rng();
    let mut pool: Vec<usize> = (0..trivial_pool).collect();
    pool.shuffle(&mut rng);
    pool.truncate(n_t);

    let mut order: Vec<&HnSource> = sources.iter().filter(|s| s.k > 0).collect();
    order.shuffle(&mut SeedPath::root(seed).push("hard-negative", 0).rng());
    // reach[i][r]: some subset of order[i..] sums to exactly r.
    let mut reach = vec![vec![false; n_hn + 1]; order.len() + 1];
    reach[order.len()][0] = true;
    for i in (0..order.len()).rev() {
        let k = order[i].k;
        for r in 0..=n_hn {
            reach[i][r] = reach[i + 1][r] || (k <= r && reach[i + 1][r - k]);
        }
    }
    if !reach[0][n_hn] {
        return Err(Error::PoolExhausted(format!(
            "no combination of whole candidate sets fills {n_hn} hard-negative slots"
        )));
    }
    let mut remaining = n_hn;
    let mut hard_negatives = Vec::with_capacity(n_hn);
    for (i, s) in order.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if s.k <= remaining && reach[i + 1][remaining - s.k] {
            hard_negatives.extend((0..s.k).map(|c| HnItem {
                case_id: s.case_id.clone(),
                candidate: c,
            }));
            remaining -= s.k;
        }
    }
    Ok(BatchSpec {
        trivial: pool,
        hard_negatives,
    })
}
