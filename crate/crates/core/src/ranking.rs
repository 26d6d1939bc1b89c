//! Zero-centered cross-sectional ranks, score orderings and the five-bin
//! coarse ranking with (1, 3, 6, 3, 1)/14 proportions.

use serde::{Deserialize, Serialize};

use crate::error::RankingError;
use crate::quarter::QuarterLabel;

/// Relative bin weights, best bin first.
pub const BIN_WEIGHTS: [u64; 5] = [1, 3, 6, 3, 1];
const BIN_WEIGHT_TOTAL: u64 = 14;
/// Order in which equal largest-remainder fractions are served.
const REMAINDER_PRIORITY: [usize; 5] = [0, 4, 1, 3, 2];

/// One quarter's zero-centered rank values with the induced ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSnapshot {
    pub quarter: QuarterLabel,
    pub values: Vec<f64>,
    /// Indices into `values`, best first.
    pub ordering: Vec<usize>,
}

impl RankSnapshot {
    pub fn new(quarter: QuarterLabel, raw: &[Option<f64>], ids: &[&str]) -> Result<Self, RankingError> {
        let values = zero_centered_rank(raw)?;
        let ordering = rank_from_scores(&values, ids)?;
        Ok(Self {
            quarter,
            values,
            ordering,
        })
    }
}

/// Maps present values to `(N + 1 − 2p) / (N − 1)` where `p` is the
/// descending position (ties share the mean position). Missing entries map
/// to the neutral 0.
pub fn zero_centered_rank(values: &[Option<f64>]) -> Result<Vec<f64>, RankingError> {
    let present: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|x| (i, x)))
        .collect();
    if present.is_empty() {
        return Err(RankingError::AllMissing);
    }
    let n = present.len();
    let mut out = vec![0.0; values.len()];
    if n == 1 {
        return Ok(out);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| present[b].1.total_cmp(&present[a].1));
    let denom = (n - 1) as f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && present[order[j + 1]].1 == present[order[i]].1 {
            j += 1;
        }
        // positions are 1-based: i+1 ..= j+1
        let p = (i + j + 2) as f64 / 2.0;
        let v = (n as f64 + 1.0 - 2.0 * p) / denom;
        for &k in &order[i..=j] {
            out[present[k].0] = v;
        }
        i = j + 1;
    }
    Ok(out)
}

/// Stable descending sort of scores; ties broken by ascending id.
/// Returns indices into `scores`, best first.
pub fn rank_from_scores(scores: &[f64], ids: &[&str]) -> Result<Vec<usize>, RankingError> {
    if scores.len() != ids.len() {
        return Err(RankingError::LengthMismatch(scores.len(), ids.len()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| ids[a].cmp(ids[b])));
    Ok(idx)
}

/// Position (0-based) of every element given an ordering.
pub fn positions(ordering: &[usize]) -> Vec<usize> {
    let mut pos = vec![0; ordering.len()];
    for (p, &i) in ordering.iter().enumerate() {
        pos[i] = p;
    }
    pos
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinAssignment {
    /// Bin label 1..=5 per equity, indexed like the ordering's elements.
    pub bins: Vec<u8>,
    pub counts: [usize; 5],
}

/// Integer bin sizes for `n` equities by largest remainder over the
/// (1, 3, 6, 3, 1)/14 weights.
pub fn vl_bin_counts(n: usize) -> Result<[usize; 5], RankingError> {
    if n < 5 {
        return Err(RankingError::TooFewForBins(n));
    }
    let n = n as u64;
    let mut counts = [0usize; 5];
    let mut remainders = [0u64; 5];
    for b in 0..5 {
        let scaled = n * BIN_WEIGHTS[b];
        counts[b] = (scaled / BIN_WEIGHT_TOTAL) as usize;
        remainders[b] = scaled % BIN_WEIGHT_TOTAL;
    }
    let assigned: usize = counts.iter().sum();
    let mut leftover = n as usize - assigned;
    let mut order = REMAINDER_PRIORITY;
    // stable sort keeps the outer-bin priority among equal remainders
    order.sort_by(|&a, &b| remainders[b].cmp(&remainders[a]));
    for &b in order.iter() {
        if leftover == 0 {
            break;
        }
        counts[b] += 1;
        leftover -= 1;
    }
    Ok(counts)
}

pub fn vl_bin_assign(ordering: &[usize]) -> Result<BinAssignment, RankingError> {
    let counts = vl_bin_counts(ordering.len())?;
    let mut bins = vec![0u8; ordering.len()];
    let mut pos = 0;
    for (b, &c) in counts.iter().enumerate() {
        for &i in &ordering[pos..pos + c] {
            bins[i] = b as u8 + 1;
        }
        pos += c;
    }
    Ok(BinAssignment { bins, counts })
}
