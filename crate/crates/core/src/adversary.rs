//! Honest-then-ramp adversaries.
//!
//! An adversarial client behaves honestly for `t_honest` rounds, then adds
//! noise whose scale grows linearly over `t_ramp` rounds up to `eps_max`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Cauchy, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::seed::{self, SimRng};
use crate::{Error, Result};

/// Probability that speckle noise hits a coordinate.
pub const SPECKLE_PROBABILITY: f64 = 0.05;
/// Salt value is the coordinate plus this multiple of the noise scale.
pub const SPECKLE_SALT_FACTOR: f64 = 3.0;
/// Cauchy samples are clipped to this multiple of the noise scale.
pub const CAUCHY_CLIP_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Deterministic shift `scale * z_i` along the assigned direction.
    Ramp,
    Gaussian,
    Uniform,
    Poisson,
    Laplace,
    Speckle,
    Cauchy,
    StaticBias,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 8] = [
        NoiseKind::Ramp,
        NoiseKind::Gaussian,
        NoiseKind::Uniform,
        NoiseKind::Poisson,
        NoiseKind::Laplace,
        NoiseKind::Speckle,
        NoiseKind::Cauchy,
        NoiseKind::StaticBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Ramp => "ramp",
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Uniform => "uniform",
            NoiseKind::Poisson => "poisson",
            NoiseKind::Laplace => "laplace",
            NoiseKind::Speckle => "speckle",
            NoiseKind::Cauchy => "cauchy",
            NoiseKind::StaticBias => "static_bias",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown noise distribution `{s}`")))
    }
}

/// Which contribution the adversary corrupts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackTarget {
    ModelUpdate,
    ReputationMessage,
    Both,
    /// Raw local covariates before training.
    Features,
}

impl AttackTarget {
    pub fn corrupts_updates(self) -> bool {
        matches!(self, AttackTarget::ModelUpdate | AttackTarget::Both)
    }

    pub fn corrupts_messages(self) -> bool {
        matches!(self, AttackTarget::ReputationMessage | AttackTarget::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryProfile {
    pub t_honest: usize,
    pub t_ramp: usize,
    pub eps_max: f64,
    pub distribution: NoiseKind,
    #[serde(default = "default_bias")]
    pub bias: f64,
    #[serde(default = "default_target")]
    pub target: AttackTarget,
    /// Unit direction for the ramp attack; assigned at setup when empty.
    #[serde(default)]
    pub direction: Vec<f64>,
}

fn default_bias() -> f64 {
    0.1
}

fn default_target() -> AttackTarget {
    AttackTarget::ModelUpdate
}

impl AdversaryProfile {
    pub fn new(t_honest: usize, t_ramp: usize, eps_max: f64, distribution: NoiseKind) -> Result<Self> {
        let p = Self {
            t_honest,
            t_ramp,
            eps_max,
            distribution,
            bias: default_bias(),
            target: default_target(),
            direction: Vec::new(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_max > 0.0 && self.eps_max.is_finite()) {
            return Err(Error::InvalidConfig("eps_max must be positive".into()));
        }
        if self.t_ramp == 0 {
            return Err(Error::InvalidConfig("t_ramp must be at least 1".into()));
        }
        if !self.bias.is_finite() || self.direction.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("bias and direction must be finite".into()));
        }
        Ok(())
    }

    pub fn is_active(&self, t: usize) -> bool {
        t >= self.t_honest
    }
}

/// `0` before `t_honest`, then `min((t - t_honest) / t_ramp, eps_max)`.
pub fn noise_scale(t: usize, profile: &AdversaryProfile) -> f64 {
    if t < profile.t_honest {
        return 0.0;
    }
    ((t - profile.t_honest) as f64 / profile.t_ramp as f64).min(profile.eps_max)
}

fn laplace(b: f64, rng: &mut SimRng) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// One stochastic noise draw at scale `a` for a coordinate holding `value`;
/// returns the perturbed coordinate.
fn perturb_coordinate(kind: NoiseKind, a: f64, value: f64, rng: &mut SimRng) -> f64 {
    match kind {
        NoiseKind::Gaussian => value + Normal::new(0.0, a).expect("finite scale").sample(rng),
        NoiseKind::Uniform => value + rng.random_range(-a..=a),
        NoiseKind::Poisson => value + Poisson::new(a).expect("positive rate").sample(rng),
        NoiseKind::Laplace => value + laplace(a, rng),
        NoiseKind::Cauchy => {
            let c = CAUCHY_CLIP_FACTOR * a;
            value + Cauchy::new(0.0, a).expect("positive scale").sample(rng).clamp(-c, c)
        }
        NoiseKind::Speckle => {
            if rng.random::<f64>() < SPECKLE_PROBABILITY {
                if rng.random::<bool>() {
                    0.0
                } else {
                    value + SPECKLE_SALT_FACTOR * a
                }
            } else {
                value
            }
        }
        NoiseKind::Ramp | NoiseKind::StaticBias => value,
    }
}

/// Draws `n` noise values at scale `a` around zero; speckle is applied to a
/// vector of ones so its hits are visible.
pub fn sample_noise(kind: NoiseKind, a: f64, n: usize, rng: &mut SimRng) -> Vec<f64> {
    let base = if kind == NoiseKind::Speckle { 1.0 } else { 0.0 };
    (0..n).map(|_| perturb_coordinate(kind, a, base, rng) - base).collect()
}

/// The adversary's version of `honest` at round `t`.
pub fn perturb(honest: &[f64], t: usize, profile: &AdversaryProfile, rng: &mut SimRng) -> Vec<f64> {
    if !profile.is_active(t) {
        return honest.to_vec();
    }
    if profile.distribution == NoiseKind::StaticBias {
        return honest.iter().map(|v| v + profile.bias).collect();
    }
    let a = noise_scale(t, profile);
    if a == 0.0 {
        return honest.to_vec();
    }
    match profile.distribution {
        NoiseKind::Ramp => honest
            .iter()
            .enumerate()
            .map(|(i, v)| v + a * profile.direction.get(i).copied().unwrap_or(0.0))
            .collect(),
        kind => honest.iter().map(|&v| perturb_coordinate(kind, a, v, rng)).collect(),
    }
}

/// Corrupts one peer-feedback value. The ramp attack lowers every message
/// by the current scale; static bias subtracts the bias.
pub fn perturb_message(m: f64, t: usize, profile: &AdversaryProfile, rng: &mut SimRng) -> f64 {
    if !profile.is_active(t) {
        return m;
    }
    if profile.distribution == NoiseKind::StaticBias {
        return m - profile.bias;
    }
    let a = noise_scale(t, profile);
    match profile.distribution {
        _ if a == 0.0 => m,
        NoiseKind::Ramp => m - a,
        kind => perturb_coordinate(kind, a, m, rng),
    }
}

/// Directions returned by [`assign_directions`].
#[derive(Debug, Clone, PartialEq)]
pub struct Directions {
    pub vectors: Vec<Vec<f64>>,
    /// Set when a single adversary forces the zero vector.
    pub degenerate: bool,
}

/// Random directions that sum to zero.
///
/// When `dim >= n` the vectors are the vertices of a centred regular simplex
/// placed in a random orthonormal frame, so each has unit norm and the sum
/// vanishes. With fewer dimensions, centred Gaussian vectors are rescaled by
/// one common factor giving mean norm 1. A single adversary gets the zero
/// vector and the degenerate flag.
pub fn assign_directions(n: usize, dim: usize, seed: u64) -> Directions {
    if n <= 1 || dim == 0 {
        if n == 1 {
            log::warn!("a single adversary cannot satisfy the zero-sum constraint; using the zero direction");
        }
        return Directions {
            vectors: vec![vec![0.0; dim]; n],
            degenerate: n == 1,
        };
    }
    let mut rng = seed::stream(seed, "directions", &[n as u64, dim as u64]);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    if dim >= n {
        let g = DMatrix::from_fn(dim, n, |_, _| normal.sample(&mut rng));
        let q = g.qr().q();
        let inv_n = 1.0 / n as f64;
        let norm = ((n - 1) as f64 * inv_n).sqrt();
        let vectors = (0..n)
            .map(|i| {
                (0..dim)
                    .map(|r| {
                        let v: f64 = (0..n)
                            .map(|j| q[(r, j)] * (if i == j { 1.0 } else { 0.0 } - inv_n))
                            .sum();
                        v / norm
                    })
                    .collect()
            })
            .collect();
        return Directions {
            vectors,
            degenerate: false,
        };
    }
    let raw: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let mean: Vec<f64> = (0..dim)
        .map(|d| raw.iter().map(|v| v[d]).sum::<f64>() / n as f64)
        .collect();
    let centred: Vec<Vec<f64>> = raw
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mean_norm = centred
        .iter()
        .map(|v: &Vec<f64>| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .sum::<f64>()
        / n as f64;
    let s = if mean_norm > 0.0 { 1.0 / mean_norm } else { 0.0 };
    Directions {
        vectors: centred.into_iter().map(|v| v.into_iter().map(|x| x * s).collect()).collect(),
        degenerate: false,
    }
}
