//! Simplified trust-evidence proxy for the TFFL baseline.
//!
//! The server keeps a beta opinion per client. Each round it measures, on its
//! own validation cohort, whether the cluster average gains or loses C-index
//! when the client's update is included; a gain is positive evidence, a loss
//! negative. The client's weight is the opinion's expectation
//! `(r + 1) / (r + s + 2)`. No consensus or ledger machinery is modelled.

use crate::reputation::ValidationView;

pub const PROXY_LABEL: &str = "tffl_proxy (simplified beta-opinion stand-in; no blockchain or consensus layer)";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Opinion {
    pub positive: u64,
    pub negative: u64,
}

impl Opinion {
    pub fn expectation(&self) -> f64 {
        (self.positive as f64 + 1.0) / ((self.positive + self.negative) as f64 + 2.0)
    }
}

fn mean(vectors: &[&[f64]]) -> Vec<f64> {
    let mut out = vec![0.0; vectors[0].len()];
    for v in vectors {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += x;
        }
    }
    let n = vectors.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Evidence for each member of one cluster from the server's leave-one-out
/// test. `updates` are the members' raw updates in member order; the
/// returned values are `+1`, `-1` or `0` per member.
pub fn evidence(server: &ValidationView, updates: &[&[f64]]) -> Vec<i8> {
    if updates.len() < 2 {
        return vec![0; updates.len()];
    }
    let Some(all) = server.c_index(&mean(updates)) else {
        return vec![0; updates.len()];
    };
    (0..updates.len())
        .map(|i| {
            let rest: Vec<&[f64]> = updates.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, u)| *u).collect();
            match server.c_index(&mean(&rest)) {
                Some(without) if all > without => 1,
                Some(without) if all < without => -1,
                _ => 0,
            }
        })
        .collect()
}
