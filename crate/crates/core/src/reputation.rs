//! Peer feedback and reputation dynamics.
//!
//! Client `j` rates client `k` by the change in its own validation C-index
//! when `k`'s privatized update is blended into its model. Observer `i`
//! moves its score for `k` by `alpha * sum_j RS_ij * m_jk`, clamped to
//! `[0, T_max]`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::privacy::PeerUpdate;
use crate::seed;
use crate::survival::{concordance_index, ClientDataset};

/// Upper clamp for every score.
pub const DEFAULT_T_MAX: f64 = 10.0;
/// Score every pair starts from.
pub const INITIAL_SCORE: f64 = 1.0;

/// Pairwise scores `RS_ij` for ordered pairs `i != j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReputationMatrix {
    n: usize,
    scores: Vec<f64>,
    t_max: f64,
    round: usize,
}

impl ReputationMatrix {
    pub fn new(n: usize, initial: f64, t_max: f64) -> Self {
        let v = initial.clamp(0.0, t_max);
        let mut scores = vec![v; n * n];
        for i in 0..n {
            scores[i * n + i] = f64::NAN;
        }
        Self {
            n,
            scores,
            t_max,
            round: 0,
        }
    }

    /// Every pair at [`INITIAL_SCORE`] with ceiling [`DEFAULT_T_MAX`].
    pub fn initial(n: usize) -> Self {
        Self::new(n, INITIAL_SCORE, DEFAULT_T_MAX)
    }

    pub fn n_clients(&self) -> usize {
        self.n
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// `RS_ij`; `None` on the diagonal.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        (i != j).then(|| self.scores[i * self.n + j])
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(i != j, "reputation matrix has no diagonal");
        self.scores[i * self.n + j] = value.clamp(0.0, self.t_max);
    }

    /// `(observer, subject, score)` in row-major order, diagonal skipped.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| (0..self.n).filter(move |&j| j != i).map(move |j| (i, j, self.scores[i * self.n + j])))
    }
}

/// One peer rating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub evaluator: usize,
    pub subject: usize,
    pub value: f64,
    pub round: usize,
}

/// An evaluator's held-out data, mapped onto the global coefficient layout.
#[derive(Debug, Clone)]
pub struct ValidationView {
    /// Global coefficient index for each local column.
    columns: Vec<usize>,
    covariates: Vec<f64>,
    times: Vec<f64>,
    events: Vec<bool>,
}

impl ValidationView {
    /// `data` must already be imputed; features unknown to `global` are
    /// ignored.
    pub fn new(data: &ClientDataset, global: &[String]) -> Self {
        let mut columns = Vec::new();
        let mut local = Vec::new();
        for (c, name) in data.feature_names().iter().enumerate() {
            if let Some(g) = global.iter().position(|x| x == name) {
                columns.push(g);
                local.push(c);
            }
        }
        let mut covariates = Vec::with_capacity(data.n_patients() * local.len());
        for i in 0..data.n_patients() {
            for &c in &local {
                let v = data.value(i, c);
                covariates.push(if v.is_finite() { v } else { 0.0 });
            }
        }
        Self {
            columns,
            covariates,
            times: data.event_time().to_vec(),
            events: data.event_flag().to_vec(),
        }
    }

    pub fn n_patients(&self) -> usize {
        self.times.len()
    }

    /// Linear predictors under global coefficients.
    pub fn scores(&self, coeffs: &[f64]) -> Vec<f64> {
        let p = self.columns.len();
        (0..self.n_patients())
            .map(|i| {
                self.covariates[i * p..(i + 1) * p]
                    .iter()
                    .zip(&self.columns)
                    .map(|(x, &g)| x * coeffs[g])
                    .sum()
            })
            .collect()
    }

    /// Validation C-index; `None` without permissible pairs.
    pub fn c_index(&self, coeffs: &[f64]) -> Option<f64> {
        concordance_index(&self.scores(coeffs), &self.times, &self.events).ok()
    }
}

fn mean_of(vectors: &[&[f64]]) -> Vec<f64> {
    let n = vectors.len() as f64;
    let mut out = vec![0.0; vectors[0].len()];
    for v in vectors {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// `C(mean(theta_j, theta''_k)) - C(theta_j)` on the evaluator's validation
/// data. `None` when the validation split has no permissible pairs.
pub fn compute_feedback(evaluator: &ValidationView, base_params: &[f64], subject_update: &PeerUpdate) -> Option<f64> {
    let own = evaluator.c_index(base_params)?;
    let blended = mean_of(&[base_params, subject_update.as_slice()]);
    Some(evaluator.c_index(&blended)? - own)
}

/// Leave-one-out variant: C-index of the mean of the evaluator's model and
/// all peer updates, minus the same mean without `peers[subject]`.
pub fn compute_loo_feedback(
    evaluator: &ValidationView,
    base_params: &[f64],
    peers: &[&PeerUpdate],
    subject: usize,
) -> Option<f64> {
    let mut with: Vec<&[f64]> = vec![base_params];
    with.extend(peers.iter().map(|p| p.as_slice()));
    let without: Vec<&[f64]> = with
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != subject + 1)
        .map(|(_, v)| *v)
        .collect();
    Some(evaluator.c_index(&mean_of(&with))? - evaluator.c_index(&mean_of(&without))?)
}

/// Applies every feedback with all clients treated as one group.
pub fn update_scores(rs: &ReputationMatrix, feedbacks: &[Feedback], alpha: f64) -> ReputationMatrix {
    update_scores_within(rs, feedbacks, alpha, &vec![0; rs.n_clients()])
}

/// `RS_ik += alpha * sum_j RS_ij m_jk` over evaluators `j != i` sharing
/// observer `i`'s group label, evaluated from the pre-update scores and
/// clamped to `[0, T_max]`.
pub fn update_scores_within(
    rs: &ReputationMatrix,
    feedbacks: &[Feedback],
    alpha: f64,
    groups: &[usize],
) -> ReputationMatrix {
    let n = rs.n_clients();
    let mut delta = vec![0.0; n * n];
    for f in feedbacks.iter().filter(|f| f.value.is_finite() && f.evaluator != f.subject) {
        for i in 0..n {
            if i == f.evaluator || i == f.subject || groups[i] != groups[f.evaluator] {
                continue;
            }
            let trust = rs.get(i, f.evaluator).expect("off-diagonal");
            delta[i * n + f.subject] += trust * f.value;
        }
    }
    let mut next = rs.clone();
    next.round = rs.round + 1;
    if feedbacks.is_empty() {
        return next;
    }
    for i in 0..n {
        for k in (0..n).filter(|&k| k != i) {
            let d = delta[i * n + k];
            if d != 0.0 {
                let old = rs.get(i, k).expect("off-diagonal");
                next.set(i, k, old + alpha * d);
            }
        }
    }
    next
}

/// Aggregate score of each member of `cluster`: the mean of `RS_ji` over
/// the other members `j`. A lone member keeps [`INITIAL_SCORE`].
pub fn aggregate_scores(rs: &ReputationMatrix, cluster: &[usize]) -> Vec<f64> {
    cluster
        .iter()
        .map(|&i| {
            let observed: Vec<f64> = cluster.iter().filter(|&&j| j != i).map(|&j| rs.get(j, i).unwrap()).collect();
            if observed.is_empty() {
                INITIAL_SCORE
            } else {
                observed.iter().sum::<f64>() / observed.len() as f64
            }
        })
        .collect()
}

/// Aggregate score of every client within its own cluster.
pub fn node_scores(rs: &ReputationMatrix, labels: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; labels.len()];
    let max_label = labels.iter().copied().max().unwrap_or(0);
    for c in 0..=max_label {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        for (m, s) in members.iter().zip(aggregate_scores(rs, &members)) {
            out[*m] = s;
        }
    }
    out
}

/// Normalises non-negative scores into probabilities. Falls back to uniform
/// when the total is zero; the flag reports the fallback.
pub fn probabilities_from_scores(scores: &[f64]) -> (Vec<f64>, bool) {
    let total: f64 = scores.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        let u = 1.0 / scores.len() as f64;
        return (vec![u; scores.len()], true);
    }
    (scores.iter().map(|s| s / total).collect(), false)
}

/// `P(i) = RS_i / sum_j RS_j` over the cluster, in `cluster` order.
pub fn selection_probabilities(rs: &ReputationMatrix, cluster: &[usize]) -> Vec<f64> {
    let (p, fallback) = probabilities_from_scores(&aggregate_scores(rs, cluster));
    if fallback {
        log::warn!("cluster {cluster:?} has zero reputation mass; selecting uniformly");
    }
    p
}

pub fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Population variance of the per-node aggregate scores.
pub fn stability(rs: &ReputationMatrix, labels: &[usize]) -> f64 {
    population_variance(&node_scores(rs, labels))
}

/// Inputs of the reputation convergence simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaConfig {
    pub n_peers: usize,
    /// True reliability `RS*_v` of the rated peer.
    pub true_reliability: f64,
    pub noise_std: f64,
    pub alpha: f64,
    pub rounds: usize,
    /// Observer trust `RS_uw` in each witness, held fixed.
    pub witness_trust: f64,
    /// Starting score `RS_uv(0)`.
    pub initial_score: f64,
    pub seed: u64,
}

impl LemmaConfig {
    pub fn new(n_peers: usize, true_reliability: f64, noise_std: f64, alpha: f64, rounds: usize, seed: u64) -> Self {
        Self {
            n_peers,
            true_reliability,
            noise_std,
            alpha,
            rounds,
            witness_trust: INITIAL_SCORE,
            initial_score: INITIAL_SCORE,
            seed,
        }
    }

    /// Per-round factor of the noiseless error recursion.
    pub fn contraction_factor(&self) -> f64 {
        1.0 - self.alpha * self.n_peers as f64 * self.witness_trust * self.true_reliability
    }
}

/// Output of [`converge_lemma_sim`].
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaTrajectory {
    /// `|RS*_v - RS_uv(t)|` for `t = 0..=rounds`.
    pub errors: Vec<f64>,
    pub contraction_factor: f64,
    /// Factor inside `(0, 1)`: monotone geometric decay without noise.
    pub contracting: bool,
    /// Factor magnitude above 1 or a non-finite error.
    pub diverged: bool,
}

/// Simulates a single observer `u` rating peer `v` through `n_peers`
/// witnesses.
///
/// Witness `w` reports `m_wv = RS*_v (RS*_v - RS_uv(t)) + eta_w`, feedback
/// proportional to the gap between the true reliability and the current
/// score, so the update `RS_uv += alpha * sum_w RS_uw m_wv` gives the error
/// recursion `e(t+1) = (1 - alpha sum_w RS_uw RS*_v) e(t) - alpha sum_w RS_uw
/// eta_w`. The error is tracked directly, which keeps full relative
/// precision while it decays.
pub fn converge_lemma_sim(cfg: &LemmaConfig) -> LemmaTrajectory {
    let mut rng = seed::stream(cfg.seed, "lemma", &[]);
    let noise = (cfg.noise_std > 0.0).then(|| Normal::new(0.0, cfg.noise_std).expect("finite std"));
    let kappa = cfg.contraction_factor();
    let mut e = cfg.true_reliability - cfg.initial_score;
    let mut errors = Vec::with_capacity(cfg.rounds + 1);
    errors.push(e.abs());
    for _ in 0..cfg.rounds {
        let mut step = 0.0;
        for _ in 0..cfg.n_peers {
            let eta = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
            step += cfg.witness_trust * (cfg.true_reliability * e + eta);
        }
        e -= cfg.alpha * step;
        errors.push(e.abs());
    }
    let diverged = kappa.abs() > 1.0 || errors.iter().any(|x| !x.is_finite());
    LemmaTrajectory {
        errors,
        contraction_factor: kappa,
        contracting: kappa > 0.0 && kappa < 1.0,
        diverged,
    }
}
