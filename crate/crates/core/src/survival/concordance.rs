//! Harrell's concordance index over permissible pairs.
//!
//! A pair `(i, j)` is permissible when `t_i < t_j` and the earlier subject
//! had the event. It is concordant when the earlier subject carries the
//! higher risk score. Tied scores count one half in the C-index and zero in
//! the strict concordant-pair count used by clustering.

use crate::{Error, Result};

/// Pair tallies for one set of subjects.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PairCounts {
    pub permissible: u64,
    pub concordant: u64,
    pub tied: u64,
}

impl PairCounts {
    /// `(concordant + tied / 2) / permissible`.
    pub fn c_index(&self) -> Result<f64> {
        if self.permissible == 0 {
            return Err(Error::NoComparablePairs);
        }
        Ok((self.concordant as f64 + 0.5 * self.tied as f64) / self.permissible as f64)
    }
}

struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self { tree: vec![0; n + 1] }
    }

    fn add(&mut self, idx: usize) {
        let mut i = idx + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks strictly below `idx`.
    fn below(&self, idx: usize) -> u64 {
        let mut i = idx;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Counts permissible, concordant and score-tied pairs in O(n log n).
pub fn pair_counts(scores: &[f64], times: &[f64], events: &[bool]) -> Result<PairCounts> {
    let n = scores.len();
    if times.len() != n || events.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: times.len().min(events.len()),
        });
    }
    if scores.iter().chain(times).any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite score or time".into()));
    }

    // Dense ranks of scores; equal scores share a rank.
    let mut by_score: Vec<usize> = (0..n).collect();
    by_score.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank = vec![0usize; n];
    let mut r = 0;
    for w in 0..n {
        if w > 0 && scores[by_score[w]] != scores[by_score[w - 1]] {
            r += 1;
        }
        rank[by_score[w]] = r;
    }
    let n_ranks = r + 1;

    // Walk time groups from latest to earliest; the tree holds every
    // subject with a strictly later time.
    let mut by_time: Vec<usize> = (0..n).collect();
    by_time.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut tree = Fenwick::new(n_ranks);
    let mut inserted = 0u64;
    let mut counts = PairCounts::default();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && times[by_time[end]] == times[by_time[start]] {
            end += 1;
        }
        for &i in &by_time[start..end] {
            if events[i] {
                let lower = tree.below(rank[i]);
                let lower_or_equal = tree.below(rank[i] + 1);
                counts.permissible += inserted;
                counts.concordant += lower;
                counts.tied += lower_or_equal - lower;
            }
        }
        for &i in &by_time[start..end] {
            tree.add(rank[i]);
            inserted += 1;
        }
        start = end;
    }
    Ok(counts)
}

/// Fraction of permissible pairs ranked correctly by `scores` (higher score
/// means higher risk), with tied scores counting one half.
pub fn concordance_index(scores: &[f64], times: &[f64], events: &[bool]) -> Result<f64> {
    pair_counts(scores, times, events)?.c_index()
}
