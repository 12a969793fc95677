//! Gaussian mechanism for the peer channel and its propagated error bounds.
//!
//! Updates shared with peers are clipped to L2 norm `Q` and perturbed with
//! i.i.d. `N(0, sigma^2)` noise, `sigma = Q * sqrt(2 ln(1.25 / delta)) / zeta`.
//! The server always receives the raw update. [`PeerUpdate`] can only be
//! built by [`privatize`] (or the explicit ablation constructor), so the peer
//! channel never carries a raw vector by accident.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::seed::SimRng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpParams {
    /// L2 clipping norm `Q`.
    pub clip_norm: f64,
    /// Privacy budget `zeta`.
    pub epsilon: f64,
    pub delta: f64,
}

impl Default for DpParams {
    fn default() -> Self {
        Self {
            clip_norm: 1.0,
            epsilon: 1.0,
            delta: 1e-5,
        }
    }
}

impl DpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::InvalidConfig("clip_norm must be positive".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig("delta must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `update` by `min(1, Q / |update|)`.
pub fn clip(update: &[f64], q: f64) -> Vec<f64> {
    let norm = l2_norm(update);
    if norm <= q {
        return update.to_vec();
    }
    let s = q / norm;
    let mut out: Vec<f64> = update.iter().map(|x| x * s).collect();
    // Rounding can leave the norm a hair above Q.
    let after = l2_norm(&out);
    if after > q {
        let t = q / after;
        out.iter_mut().for_each(|x| *x *= t);
    }
    out
}

pub fn gaussian_sigma(params: &DpParams) -> f64 {
    params.clip_norm * (2.0 * (1.25 / params.delta).ln()).sqrt() / params.epsilon
}

/// A vector fit for the peer channel.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerUpdate(Vec<f64>);

impl PeerUpdate {
    /// Passes a raw update to peers. Only for runs with privacy disabled.
    pub fn unprivatized(update: Vec<f64>) -> Self {
        Self(update)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Clip to `Q`, then add `N(0, sigma^2)` to every coordinate.
pub fn privatize(update: &[f64], params: &DpParams, rng: &mut SimRng) -> PeerUpdate {
    privatize_with_sigma(update, params.clip_norm, gaussian_sigma(params), rng)
}

/// [`privatize`] with an explicit noise level; `sigma = 0` only clips.
pub fn privatize_with_sigma(update: &[f64], q: f64, sigma: f64, rng: &mut SimRng) -> PeerUpdate {
    let clipped = clip(update, q);
    if sigma == 0.0 {
        return PeerUpdate(clipped);
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    PeerUpdate(clipped.into_iter().map(|x| x + normal.sample(rng)).collect())
}

/// Constants entering the propagated error bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Lipschitz constant `L_Omega` of the accuracy functional.
    pub lipschitz: f64,
    pub dim: usize,
    /// Reputation learning rate `alpha`.
    pub learning_rate: f64,
    pub n_peers: usize,
    /// Score ceiling `T_max`.
    pub rs_max: f64,
    /// Smallest reputation mass `S_min` in a cluster.
    pub s_min: f64,
    pub cluster_size: usize,
    /// Largest coefficient norm `Theta_max`.
    pub theta_max: f64,
    /// Smoothness `L_k` of the global loss.
    pub smoothness: f64,
}

/// `L_Omega * sqrt(d) * sigma`.
pub fn feedback_error_bound(b: &BoundInputs, p: &DpParams) -> f64 {
    b.lipschitz * (b.dim as f64).sqrt() * gaussian_sigma(p)
}

/// `alpha * N_p * T_max * feedback bound`.
pub fn reputation_error_bound(b: &BoundInputs, p: &DpParams) -> f64 {
    b.learning_rate * b.n_peers as f64 * b.rs_max * feedback_error_bound(b, p)
}

/// `reputation bound / S_min * (1 + |C| T_max / S_min)`.
pub fn selection_error_bound(b: &BoundInputs, p: &DpParams) -> Result<f64> {
    if !(b.s_min > 0.0) {
        return Err(Error::DegenerateReputationMass);
    }
    Ok(reputation_error_bound(b, p) / b.s_min * (1.0 + b.cluster_size as f64 * b.rs_max / b.s_min))
}

/// `(L_k / 2) * (|C| Theta_max * selection bound)^2`.
pub fn loss_increase_bound(b: &BoundInputs, p: &DpParams) -> Result<f64> {
    let s = selection_error_bound(b, p)?;
    Ok(0.5 * b.smoothness * (b.cluster_size as f64 * b.theta_max * s).powi(2))
}

/// Empirical Lipschitz surrogate of `f` at `theta`: the largest
/// `|f(theta + delta) - f(theta)| / |delta|` over `probes` random
/// perturbations of norm `radius`. Probes where `f` is undefined are skipped.
pub fn lipschitz_surrogate<F>(f: F, theta: &[f64], probes: usize, radius: f64, rng: &mut SimRng) -> Option<f64>
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let base = f(theta)?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut best: Option<f64> = None;
    for _ in 0..probes {
        let dir: Vec<f64> = theta.iter().map(|_| normal.sample(rng)).collect();
        let scale = rng.random_range(0.1..=1.0) * radius / l2_norm(&dir).max(f64::MIN_POSITIVE);
        let moved: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + scale * d).collect();
        let step = l2_norm(&moved.iter().zip(theta).map(|(a, b)| a - b).collect::<Vec<_>>());
        if step == 0.0 {
            continue;
        }
        if let Some(v) = f(&moved) {
            let ratio = (v - base).abs() / step;
            best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
        }
    }
    best
}
