//! Round-based federated training with peer reputation.
//!
//! Round 0 imputes and splits every client's data, clusters the clients and
//! starts each cluster from the zero model with every reputation score at
//! 1.0. Each later round runs, in order: local training warm-started from the
//! cluster model, adversarial corruption, privatization of the peer copy,
//! peer feedback and the reputation update (on feedback rounds only),
//! reputation-proportional participant sampling per cluster, weighted
//! aggregation and metric logging.
//!
//! Model vectors always span the global feature list. A client refits only
//! the coefficients of its own features and passes the others through from
//! the cluster model.

pub mod aggregate;
pub mod tffl;

use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{assign_directions, perturb, perturb_message, AdversaryProfile, AttackTarget, NoiseKind};
use crate::clustering::{cluster_clients, ClientSummary, ClusterAssignment, ClusterConfig};
use crate::privacy::{privatize, DpParams, PeerUpdate};
use crate::reputation::{
    compute_feedback, compute_loo_feedback, node_scores, population_variance, update_scores_within, Feedback,
    ReputationMatrix, ValidationView, DEFAULT_T_MAX, INITIAL_SCORE,
};
use crate::seed;
use crate::survival::{fit_coxph, ClientDataset, FitConfig};
use crate::synthetic::completeness_vector;
use crate::{Error, Result};

pub use aggregate::{aggregate_weighted, feedback_rounds, message_overhead, participants, sample_without_replacement};
pub use tffl::{Opinion, PROXY_LABEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Peer reputation with weighted aggregation.
    Ours,
    /// Uniform selection and weights, no peer channel.
    Fedavg,
    /// Server-side beta-opinion weights.
    TfflProxy,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ours, Method::TfflProxy, Method::Fedavg];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Fedavg => "fedavg",
            Method::TfflProxy => "tffl_proxy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}` (expected ours, fedavg or tffl_proxy)")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How often feedback is exchanged: every `n` rounds, or never.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CadenceRepr", into = "CadenceRepr")]
pub enum Cadence {
    Every(usize),
    Never,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CadenceRepr {
    Rounds(usize),
    Word(String),
}

impl TryFrom<CadenceRepr> for Cadence {
    type Error = String;

    fn try_from(r: CadenceRepr) -> std::result::Result<Self, String> {
        match r {
            CadenceRepr::Rounds(0) => Err("update_frequency must be at least 1 (use \"never\" to disable)".into()),
            CadenceRepr::Rounds(n) => Ok(Cadence::Every(n)),
            CadenceRepr::Word(w) if w == "never" => Ok(Cadence::Never),
            CadenceRepr::Word(w) => Err(format!("invalid update_frequency `{w}`")),
        }
    }
}

impl From<Cadence> for CadenceRepr {
    fn from(c: Cadence) -> Self {
        match c {
            Cadence::Every(n) => CadenceRepr::Rounds(n),
            Cadence::Never => CadenceRepr::Word("never".into()),
        }
    }
}

impl Cadence {
    pub fn frequency(self) -> Option<usize> {
        match self {
            Cadence::Every(n) => Some(n),
            Cadence::Never => None,
        }
    }

    pub fn is_feedback_round(self, t: usize) -> bool {
        matches!(self, Cadence::Every(n) if t > 0 && t.is_multiple_of(n))
    }
}

impl fmt::Display for Cadence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cadence::Every(n) => write!(f, "{n}"),
            Cadence::Never => f.write_str("never"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    /// Blend the subject's update into the evaluator's model.
    Pairwise,
    /// Drop the subject from the evaluator's view of the cluster average.
    LeaveOneOut,
}

/// Whether peers share one noisy copy per round or get independent draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DpNoise {
    PerRound,
    PerPeer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub method: Method,
    pub rounds: usize,
    /// Reputation learning rate.
    pub alpha: f64,
    pub t_max: f64,
    pub update_frequency: Cadence,
    pub participation_fraction: f64,
    pub validation_fraction: f64,
    pub feedback_mode: FeedbackMode,
    /// Rounds until clients train on all their data; `None` uses all data
    /// from round 1.
    pub growing_data_rounds: Option<usize>,
    /// Re-run clustering every this many rounds.
    pub recluster_every: Option<usize>,
    /// Patients in the server's own validation cohort (TFFL proxy).
    pub server_validation_patients: usize,
    pub dp_noise: DpNoise,
    pub fit: FitConfig,
    pub clustering: ClusterConfig,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            method: Method::Ours,
            rounds: 50,
            alpha: 0.1,
            t_max: DEFAULT_T_MAX,
            update_frequency: Cadence::Every(1),
            participation_fraction: 0.8,
            validation_fraction: 0.2,
            feedback_mode: FeedbackMode::Pairwise,
            growing_data_rounds: None,
            recluster_every: None,
            server_validation_patients: 200,
            dp_noise: DpNoise::PerRound,
            fit: FitConfig {
                ridge_penalty: 1e-2,
                ..FitConfig::default()
            },
            clustering: ClusterConfig::default(),
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be non-negative");
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return bad("t_max must be positive");
        }
        if !(self.participation_fraction > 0.0 && self.participation_fraction <= 1.0) {
            return bad("participation_fraction must lie in (0, 1]");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        if self.growing_data_rounds == Some(0) || self.recluster_every == Some(0) {
            return bad("growing_data_rounds and recluster_every must be positive when set");
        }
        if let Cadence::Every(0) = self.update_frequency {
            return bad("update_frequency must be at least 1");
        }
        self.fit.validate()
    }

    /// Fraction of training rows available at round `t >= 1`.
    pub fn data_fraction(&self, t: usize) -> f64 {
        match self.growing_data_rounds {
            Some(r) => (t as f64 / r as f64).min(1.0),
            None => 1.0,
        }
    }
}

/// Per-round log entry.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub global_c_index: f64,
    pub stability: f64,
    /// Per-client trust under the run's method.
    pub node_scores: Vec<f64>,
    pub messages_sent: u64,
    pub cumulative_messages: u64,
    pub selected_clients: Vec<usize>,
    pub cluster_c_index: Vec<f64>,
}

/// Clients and cohorts a run starts from.
#[derive(Debug, Clone)]
pub struct FederationInput {
    pub global_features: Vec<String>,
    /// Raw center data, possibly with missing cells.
    pub centers: Vec<ClientDataset>,
    pub eval_cohort: ClientDataset,
    pub server_cohort: ClientDataset,
    /// Adversary profile per client, `None` for honest clients.
    pub adversaries: Vec<Option<AdversaryProfile>>,
}

struct Client {
    /// Global index of each local column.
    features: Vec<usize>,
    train: ClientDataset,
    validation: ValidationView,
    adversary: Option<AdversaryProfile>,
    completeness: Vec<f64>,
}

/// Simulation state between rounds.
pub struct Federation {
    config: FederationConfig,
    dp: Option<DpParams>,
    seed: u64,
    global_features: Vec<String>,
    clients: Vec<Client>,
    eval: ValidationView,
    server: ValidationView,
    assignment: ClusterAssignment,
    models: Vec<Vec<f64>>,
    reputation: ReputationMatrix,
    opinions: Vec<Opinion>,
    updates: Vec<Vec<f64>>,
    round: usize,
    metrics: Vec<RoundMetrics>,
    reputation_log: Vec<(usize, ReputationMatrix)>,
    cumulative_messages: u64,
    warnings: Vec<String>,
}

fn shuffled(n: usize, seed: u64, tag: &str, idx: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::stream(seed, tag, &[idx]));
    order
}

impl Federation {
    /// Round-0 initialisation: imputation, validation split, pilot fits,
    /// clustering, zero models and unit reputation.
    pub fn new(input: FederationInput, config: FederationConfig, dp: Option<DpParams>, seed: u64) -> Result<Self> {
        config.validate()?;
        if let Some(p) = &dp {
            p.validate()?;
        }
        let n = input.centers.len();
        if n == 0 {
            return Err(Error::InvalidConfig("a federation needs at least one client".into()));
        }
        if input.adversaries.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: input.adversaries.len(),
            });
        }
        let dim = input.global_features.len();
        let mut warnings = Vec::new();

        let mut adversaries = input.adversaries.clone();
        let ramp: Vec<usize> = (0..n)
            .filter(|&i| {
                adversaries[i]
                    .as_ref()
                    .is_some_and(|p| p.distribution == NoiseKind::Ramp && p.direction.is_empty())
            })
            .collect();
        if !ramp.is_empty() {
            let dirs = assign_directions(ramp.len(), dim, seed::derive(seed, "directions", &[]));
            if dirs.degenerate {
                warnings.push("single ramp adversary: zero-sum direction forced to zero".to_string());
            }
            for (&i, d) in ramp.iter().zip(dirs.vectors) {
                adversaries[i].as_mut().unwrap().direction = d;
            }
        }
        for p in adversaries.iter().flatten() {
            p.validate()?;
            if p.distribution == NoiseKind::Ramp && p.direction.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.direction.len(),
                });
            }
        }

        let mut clients = Vec::with_capacity(n);
        for (i, (raw, adversary)) in input.centers.iter().zip(adversaries).enumerate() {
            let features = raw
                .feature_names()
                .iter()
                .map(|name| {
                    input
                        .global_features
                        .iter()
                        .position(|g| g == name)
                        .ok_or_else(|| Error::InvalidData(format!("client {i} has unknown feature `{name}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            let imputed = raw.impute_mean();
            let order = shuffled(imputed.n_patients(), seed, "split", i as u64);
            let n_val = ((config.validation_fraction * order.len() as f64).round() as usize).min(order.len());
            let validation = imputed.subset(&order[..n_val]);
            let train = imputed.subset(&order[n_val..]);
            clients.push(Client {
                features,
                validation: ValidationView::new(&validation, &input.global_features),
                train,
                adversary,
                completeness: completeness_vector(raw, &input.global_features).values,
            });
        }

        let zero = vec![0.0; dim];
        let pilot: Vec<Vec<f64>> = clients
            .par_iter()
            .map(|c| local_fit(c, &zero, &config.fit, c.train.n_patients()).unwrap_or_else(|| zero.clone()))
            .collect();
        let assignment = cluster(&clients, &pilot, &config.clustering, seed, 0, &input.global_features)?;
        let n_clusters = assignment.n_clusters();
        let mut fed = Self {
            eval: ValidationView::new(&input.eval_cohort, &input.global_features),
            server: ValidationView::new(&input.server_cohort, &input.global_features),
            models: vec![zero.clone(); n_clusters],
            reputation: ReputationMatrix::new(n, INITIAL_SCORE, config.t_max),
            opinions: vec![Opinion::default(); n],
            updates: vec![zero; n],
            round: 0,
            metrics: Vec::new(),
            reputation_log: Vec::new(),
            cumulative_messages: 0,
            warnings,
            assignment,
            config,
            dp,
            seed,
            global_features: input.global_features,
            clients,
        };
        fed.log_round(0, Vec::new());
        Ok(fed)
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn metrics(&self) -> &[RoundMetrics] {
        &self.metrics
    }

    /// `(round, matrix)` after each round, starting with round 0.
    pub fn reputation_log(&self) -> &[(usize, ReputationMatrix)] {
        &self.reputation_log
    }

    pub fn reputation(&self) -> &ReputationMatrix {
        &self.reputation
    }

    pub fn assignment(&self) -> &ClusterAssignment {
        &self.assignment
    }

    /// Current model of each cluster.
    pub fn models(&self) -> &[Vec<f64>] {
        &self.models
    }

    /// Each client's update from the latest round, as sent to aggregation.
    pub fn updates(&self) -> &[Vec<f64>] {
        &self.updates
    }

    pub fn global_features(&self) -> &[String] {
        &self.global_features
    }

    pub fn adversarial(&self) -> Vec<bool> {
        self.clients.iter().map(|c| c.adversary.is_some()).collect()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    /// Runs rounds until `config.rounds` is reached.
    pub fn run(&mut self) -> Result<()> {
        while self.round < self.config.rounds {
            self.run_round()?;
        }
        Ok(())
    }

    /// One full round.
    pub fn run_round(&mut self) -> Result<()> {
        let t = self.round + 1;
        let cfg = &self.config;
        let labels = self.assignment.labels.clone();

        // Local training from the cluster model.
        let updates: Vec<Vec<f64>> = self
            .clients
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                let start = &self.models[labels[i]];
                let rows = ((cfg.data_fraction(t) * c.train.n_patients() as f64).ceil() as usize).min(c.train.n_patients());
                let honest = match &c.adversary {
                    Some(p) if p.target == AttackTarget::Features => attacked_fit(c, start, &cfg.fit, rows, t, p, self.seed, i),
                    _ => local_fit(c, start, &cfg.fit, rows),
                }
                .unwrap_or_else(|| start.clone());
                match &c.adversary {
                    Some(p) if p.target.corrupts_updates() => {
                        perturb(&honest, t, p, &mut seed::stream(self.seed, "attack", &[t as u64, i as u64]))
                    }
                    _ => honest,
                }
            })
            .collect();

        let members: Vec<Vec<usize>> = (0..self.assignment.n_clusters()).map(|k| self.assignment.members(k)).collect();

        // Peer feedback and reputation.
        let mut messages = 0;
        if cfg.method == Method::Ours && cfg.update_frequency.is_feedback_round(t) {
            let feedbacks = self.peer_feedback(t, &updates, &members);
            messages = members.iter().map(|m| (m.len() * m.len().saturating_sub(1)) as u64).sum();
            self.reputation = update_scores_within(&self.reputation, &feedbacks, cfg.alpha, &labels);
        }

        if cfg.method == Method::TfflProxy {
            for m in &members {
                let ups: Vec<&[f64]> = m.iter().map(|&i| updates[i].as_slice()).collect();
                for (&i, e) in m.iter().zip(tffl::evidence(&self.server, &ups)) {
                    match e {
                        1 => self.opinions[i].positive += 1,
                        -1 => self.opinions[i].negative += 1,
                        _ => {}
                    }
                }
            }
        }

        // Selection and aggregation per cluster.
        let trust = self.trust_scores();
        let mut selected_all = Vec::new();
        for (k, m) in members.iter().enumerate() {
            if m.is_empty() {
                self.warnings.push(format!("round {t}: cluster {k} is empty; model carried forward"));
                continue;
            }
            let weights: Vec<f64> = match cfg.method {
                Method::Fedavg => vec![1.0; m.len()],
                _ => m.iter().map(|&i| trust[i]).collect(),
            };
            let count = participants(m.len(), cfg.participation_fraction);
            let mut rng = seed::stream(self.seed, "select", &[t as u64, k as u64]);
            let picked = sample_without_replacement(&weights, count, &mut rng);
            let chosen: Vec<usize> = picked.iter().map(|&p| m[p]).collect();
            let mut w: Vec<f64> = picked.iter().map(|&p| weights[p]).collect();
            if w.iter().sum::<f64>() <= 0.0 {
                log::warn!("round {t}: cluster {k} selected clients carry zero weight; averaging uniformly");
                w = vec![1.0; w.len()];
            }
            let ups: Vec<&[f64]> = chosen.iter().map(|&i| updates[i].as_slice()).collect();
            self.models[k] = aggregate_weighted(&ups, &w)?;
            selected_all.extend(chosen);
        }
        selected_all.sort_unstable();

        self.updates = updates;
        self.round = t;
        self.cumulative_messages += messages;
        if let Some(every) = cfg.recluster_every {
            if t.is_multiple_of(every) && t < cfg.rounds {
                self.recluster(t)?;
            }
        }
        self.log_round(messages, selected_all);
        Ok(())
    }

    fn peer_feedback(&self, t: usize, updates: &[Vec<f64>], members: &[Vec<usize>]) -> Vec<Feedback> {
        let share = |i: usize, j: usize| -> PeerUpdate {
            match &self.dp {
                None => PeerUpdate::unprivatized(updates[i].clone()),
                Some(p) => {
                    let idx: &[u64] = match self.config.dp_noise {
                        DpNoise::PerRound => &[t as u64, i as u64],
                        DpNoise::PerPeer => &[t as u64, i as u64, j as u64],
                    };
                    privatize(&updates[i], p, &mut seed::stream(self.seed, "dp", idx))
                }
            }
        };
        let per_round: Vec<Option<PeerUpdate>> = (0..updates.len())
            .map(|i| (self.config.dp_noise == DpNoise::PerRound || self.dp.is_none()).then(|| share(i, 0)))
            .collect();
        let pairs: Vec<(usize, usize, usize)> = members
            .iter()
            .enumerate()
            .flat_map(|(k, m)| m.iter().flat_map(move |&j| m.iter().filter(move |&&s| s != j).map(move |&s| (k, j, s))))
            .collect();
        let mode = self.config.feedback_mode;
        pairs
            .par_iter()
            .filter_map(|&(k, j, s)| {
                let evaluator = &self.clients[j];
                let value = match mode {
                    FeedbackMode::Pairwise => {
                        let peer = per_round[s].clone().unwrap_or_else(|| share(s, j));
                        compute_feedback(&evaluator.validation, &updates[j], &peer)
                    }
                    FeedbackMode::LeaveOneOut => {
                        let others: Vec<usize> = members[k].iter().copied().filter(|&x| x != j).collect();
                        let shared: Vec<PeerUpdate> = others
                            .iter()
                            .map(|&o| per_round[o].clone().unwrap_or_else(|| share(o, j)))
                            .collect();
                        let refs: Vec<&PeerUpdate> = shared.iter().collect();
                        let pos = others.iter().position(|&o| o == s).expect("subject in cluster");
                        compute_loo_feedback(&evaluator.validation, &updates[j], &refs, pos)
                    }
                }?;
                let value = match &evaluator.adversary {
                    Some(p) if p.target.corrupts_messages() => {
                        perturb_message(value, t, p, &mut seed::stream(self.seed, "message", &[t as u64, j as u64, s as u64]))
                    }
                    _ => value,
                };
                Some(Feedback {
                    evaluator: j,
                    subject: s,
                    value,
                    round: t,
                })
            })
            .collect()
    }

    fn trust_scores(&self) -> Vec<f64> {
        match self.config.method {
            Method::TfflProxy => self.opinions.iter().map(Opinion::expectation).collect(),
            _ => node_scores(&self.reputation, &self.assignment.labels),
        }
    }

    fn recluster(&mut self, t: usize) -> Result<()> {
        let new = cluster(
            &self.clients,
            &self.updates,
            &self.config.clustering,
            self.seed,
            t,
            &self.global_features,
        )?;
        let old_labels = self.assignment.labels.clone();
        let models: Vec<Vec<f64>> = (0..new.n_clusters())
            .map(|k| {
                let m = new.members(k);
                let ups: Vec<&[f64]> = m.iter().map(|&i| self.models[old_labels[i]].as_slice()).collect();
                aggregate_weighted(&ups, &vec![1.0; ups.len()])
            })
            .collect::<Result<_>>()?;
        self.models = models;
        self.assignment = new;
        Ok(())
    }

    fn log_round(&mut self, messages: u64, selected: Vec<usize>) {
        let trust = self.trust_scores();
        let cluster_c: Vec<f64> = self.models.iter().map(|m| self.eval.c_index(m).unwrap_or(0.5)).collect();
        let mut mass = vec![0.0; cluster_c.len()];
        for (i, &l) in self.assignment.labels.iter().enumerate() {
            mass[l] += trust[i];
        }
        let total: f64 = mass.iter().sum();
        let global = if total > 0.0 {
            cluster_c.iter().zip(&mass).map(|(c, m)| c * m).sum::<f64>() / total
        } else {
            cluster_c.iter().sum::<f64>() / cluster_c.len() as f64
        };
        self.reputation_log.push((self.round, self.reputation.clone()));
        self.metrics.push(RoundMetrics {
            round: self.round,
            global_c_index: global,
            stability: population_variance(&trust),
            node_scores: trust,
            messages_sent: messages,
            cumulative_messages: self.cumulative_messages,
            selected_clients: selected,
            cluster_c_index: cluster_c,
        });
    }
}

fn assemble(features: &[usize], start: &[f64], local: &[f64]) -> Vec<f64> {
    let mut theta = start.to_vec();
    for (&g, &b) in features.iter().zip(local) {
        theta[g] = b;
    }
    theta
}

/// Refit on the first `rows` training rows from the cluster model; `None`
/// when the fit fails.
fn local_fit(c: &Client, start: &[f64], fit: &FitConfig, rows: usize) -> Option<Vec<f64>> {
    let idx: Vec<usize> = (0..rows).collect();
    fit_rows(c, &c.train.subset(&idx), start, fit)
}

fn fit_rows(c: &Client, data: &ClientDataset, start: &[f64], fit: &FitConfig) -> Option<Vec<f64>> {
    let init: Vec<f64> = c.features.iter().map(|&g| start[g]).collect();
    match fit_coxph(data, Some(&init), fit) {
        Ok(f) => Some(assemble(&c.features, start, f.model.coefficients())),
        Err(e) => {
            log::debug!("local fit failed: {e}");
            None
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn attacked_fit(
    c: &Client,
    start: &[f64],
    fit: &FitConfig,
    rows: usize,
    t: usize,
    profile: &AdversaryProfile,
    seed_base: u64,
    client: usize,
) -> Option<Vec<f64>> {
    let idx: Vec<usize> = (0..rows).collect();
    let data = c.train.subset(&idx);
    let mut local_profile = profile.clone();
    if !profile.direction.is_empty() {
        local_profile.direction = c.features.iter().map(|&g| profile.direction[g]).collect();
    }
    let mut rng = seed::stream(seed_base, "feature-attack", &[t as u64, client as u64]);
    let p = data.n_features();
    let mut cov = Vec::with_capacity(data.covariates().len());
    for i in 0..data.n_patients() {
        cov.extend(perturb(&data.covariates()[i * p..(i + 1) * p], t, &local_profile, &mut rng));
    }
    let data = data.with_covariates(cov).ok()?;
    fit_rows(c, &data, start, fit)
}

/// Clusters clients from completeness vectors and the risk each client's
/// current coefficients assign to a fixed subsample of its training data.
fn cluster(
    clients: &[Client],
    coeffs: &[Vec<f64>],
    config: &ClusterConfig,
    seed_base: u64,
    t: usize,
    global: &[String],
) -> Result<ClusterAssignment> {
    let b: Vec<Vec<f64>> = clients.iter().map(|c| c.completeness.clone()).collect();
    let summaries: Vec<ClientSummary> = clients
        .iter()
        .zip(coeffs)
        .enumerate()
        .map(|(i, (c, theta))| {
            let order = shuffled(c.train.n_patients(), seed_base, "cluster-subsample", i as u64);
            let rows: Vec<usize> = order.into_iter().take(config.subsample).collect();
            let sub = c.train.subset(&rows);
            let view = ValidationView::new(&sub, global);
            ClientSummary {
                risk: view.scores(theta),
                times: sub.event_time().to_vec(),
                events: sub.event_flag().to_vec(),
            }
        })
        .collect();
    if config.n_clusters == 1 {
        let mut single = ClusterAssignment::single(&b);
        single.objective = crate::clustering::objective_value(&b, &single.labels, 1, config.lambda, &summaries)?;
        return Ok(single);
    }
    cluster_clients(&b, &summaries, config, seed::derive(seed_base, "clustering", &[t as u64]))
}
