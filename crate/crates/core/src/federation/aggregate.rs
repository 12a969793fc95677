//! Weighted aggregation, participant sampling and message accounting.

use rand::Rng;

use crate::seed::SimRng;
use crate::{Error, Result};

/// `sum_i w_i theta_i / sum_i w_i`.
pub fn aggregate_weighted(updates: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    if updates.len() != weights.len() || updates.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: updates.len(),
            found: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidData("aggregation weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroWeights);
    }
    let dim = updates[0].len();
    if let Some(bad) = updates.iter().find(|u| u.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    let mut out = vec![0.0; dim];
    for (u, &w) in updates.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (o, x) in out.iter_mut().zip(u.iter()) {
            *o += w * x;
        }
    }
    out.iter_mut().for_each(|o| *o /= total);
    Ok(out)
}

/// Draws `m` distinct indices with probability proportional to `weights`,
/// one at a time with the remaining weights renormalised. Once the remaining
/// weight is exhausted the rest are drawn uniformly. Returned sorted.
pub fn sample_without_replacement(weights: &[f64], m: usize, rng: &mut SimRng) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut chosen = Vec::with_capacity(m.min(weights.len()));
    while chosen.len() < m && !remaining.is_empty() {
        let total: f64 = remaining.iter().map(|&i| weights[i].max(0.0)).sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pos = remaining.len() - 1;
            for (p, &i) in remaining.iter().enumerate() {
                acc += weights[i].max(0.0);
                if target < acc {
                    pos = p;
                    break;
                }
            }
            // Never land on a zero-weight entry through rounding.
            while weights[remaining[pos]] <= 0.0 && pos > 0 {
                pos -= 1;
            }
            pos
        } else {
            rng.random_range(0..remaining.len())
        };
        chosen.push(remaining.remove(pick));
    }
    chosen.sort_unstable();
    chosen
}

/// Participants drawn from a cluster of `size`: `ceil(fraction * size)`,
/// at least one.
pub fn participants(size: usize, fraction: f64) -> usize {
    if size == 0 {
        return 0;
    }
    ((fraction * size as f64 - 1e-9).ceil() as usize).clamp(1, size)
}

/// Feedback rounds among `1..=total_time` under cadence `frequency`.
pub fn feedback_rounds(total_time: usize, frequency: Option<usize>) -> usize {
    match frequency {
        Some(f) if f > 0 => total_time / f,
        _ => 0,
    }
}

/// Total peer messages: each client sends `|C| - 1` per feedback round.
pub fn message_overhead(cluster_sizes: &[usize], total_time: usize, frequency: Option<usize>) -> u64 {
    let rounds = feedback_rounds(total_time, frequency) as u64;
    cluster_sizes
        .iter()
        .map(|&s| (s as u64) * (s.saturating_sub(1) as u64) * rounds)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn aggregation_examples() {
        let a = [3.0];
        let b = [1.0];
        assert_eq!(aggregate_weighted(&[&a, &b], &[1.0, 1.0]).unwrap(), vec![2.0]);
        assert_eq!(aggregate_weighted(&[&a, &b], &[1.0, 0.0]).unwrap(), vec![3.0]);
        let z = [0.0];
        assert_eq!(aggregate_weighted(&[&a, &z], &[2.0, 1.0]).unwrap(), vec![2.0]);
        assert!(matches!(aggregate_weighted(&[&a, &b], &[0.0, 0.0]), Err(Error::ZeroWeights)));
    }

    #[test]
    fn overhead_examples() {
        assert_eq!(message_overhead(&[5], 100, Some(10)), 200);
        assert_eq!(message_overhead(&[5], 9, Some(10)), 0);
        assert_eq!(message_overhead(&[1, 1, 1], 100, Some(1)), 0);
        assert_eq!(message_overhead(&[4], 100, None), 0);
    }

    #[test]
    fn participant_counts() {
        assert_eq!(participants(10, 0.8), 8);
        assert_eq!(participants(5, 0.8), 4);
        assert_eq!(participants(1, 0.8), 1);
        assert_eq!(participants(3, 0.8), 3);
    }

    #[test]
    fn sampling_skips_zero_weights_while_mass_remains() {
        let mut rng = seed::stream(5, "s", &[]);
        for _ in 0..200 {
            let s = sample_without_replacement(&[0.0, 1.0, 0.0, 2.0], 2, &mut rng);
            assert_eq!(s, vec![1, 3]);
        }
        let s = sample_without_replacement(&[0.0, 0.0, 0.0], 2, &mut rng);
        assert_eq!(s.len(), 2);
    }
}
