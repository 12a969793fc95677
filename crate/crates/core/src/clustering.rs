//! Clustering clients by feature completeness and pooled concordance.
//!
//! The objective of an assignment is
//!
//! ```text
//! sum_clusters sum_members |B_j - mu|_2  -  lambda * sum_clusters K(cluster)
//! ```
//!
//! where `mu` is the mean completeness vector of the cluster and `K` counts
//! strictly concordant permissible pairs among the cluster's pooled
//! patients. Distances are not squared, so the mean is not the minimiser of
//! the first term; the optimiser therefore searches assignments directly with
//! centroids pinned to member means.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::survival::pair_counts;
use crate::{Error, Result};

/// Risk scores and outcomes of the patients a client contributes to the
/// concordance term.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientSummary {
    pub risk: Vec<f64>,
    pub times: Vec<f64>,
    pub events: Vec<bool>,
}

impl ClientSummary {
    fn pooled<'a>(parts: impl IntoIterator<Item = &'a ClientSummary>) -> ClientSummary {
        let mut out = ClientSummary {
            risk: Vec::new(),
            times: Vec::new(),
            events: Vec::new(),
        };
        for p in parts {
            out.risk.extend_from_slice(&p.risk);
            out.times.extend_from_slice(&p.times);
            out.events.extend_from_slice(&p.events);
        }
        out
    }

    fn concordant_pairs(&self) -> Result<u64> {
        Ok(pair_counts(&self.risk, &self.times, &self.events)?.concordant)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub n_clusters: usize,
    /// Weight of the concordant-pair count.
    pub lambda: f64,
    pub restarts: usize,
    pub max_sweeps: usize,
    /// Patients per client entering the concordance term.
    pub subsample: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            n_clusters: 2,
            lambda: 1e-6,
            restarts: 10,
            max_sweeps: 100,
            subsample: 100,
        }
    }
}

/// Cluster labels plus the statistics of the chosen assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub objective: f64,
    /// Objective after each local-search sweep of the winning restart.
    pub sweep_objectives: Vec<f64>,
}

impl ClusterAssignment {
    /// Every client in cluster 0.
    pub fn single(b: &[Vec<f64>]) -> Self {
        let labels = vec![0; b.len()];
        Self {
            centroids: centroids(b, &labels, 1),
            labels,
            objective: f64::NAN,
            sweep_objectives: Vec::new(),
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == cluster).collect()
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean completeness vector per cluster; zeros for an empty cluster.
pub fn centroids(b: &[Vec<f64>], labels: &[usize], n_clusters: usize) -> Vec<Vec<f64>> {
    let dim = b.first().map_or(0, |v| v.len());
    let mut sums = vec![vec![0.0; dim]; n_clusters];
    let mut counts = vec![0usize; n_clusters];
    for (v, &l) in b.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(v) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|x| *x /= c as f64);
        }
    }
    sums
}

fn dispersion(b: &[Vec<f64>], members: &[usize]) -> f64 {
    if members.is_empty() {
        return 0.0;
    }
    let dim = b[members[0]].len();
    let mut mu = vec![0.0; dim];
    for &m in members {
        for (s, x) in mu.iter_mut().zip(&b[m]) {
            *s += x;
        }
    }
    mu.iter_mut().for_each(|x| *x /= members.len() as f64);
    members.iter().map(|&m| distance(&b[m], &mu)).sum()
}

fn check_inputs(b: &[Vec<f64>], labels: &[usize], n_clusters: usize, summaries: &[ClientSummary]) -> Result<()> {
    if labels.len() != b.len() || summaries.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: b.len(),
            found: labels.len().min(summaries.len()),
        });
    }
    if labels.iter().any(|&l| l >= n_clusters) {
        return Err(Error::InvalidConfig("cluster label out of range".into()));
    }
    Ok(())
}

/// Objective of `labels`, pooling each cluster's patients directly.
pub fn objective_value(
    b: &[Vec<f64>],
    labels: &[usize],
    n_clusters: usize,
    lambda: f64,
    summaries: &[ClientSummary],
) -> Result<f64> {
    check_inputs(b, labels, n_clusters, summaries)?;
    let mut total = 0.0;
    for c in 0..n_clusters {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let pooled = ClientSummary::pooled(members.iter().map(|&m| &summaries[m]));
        total += dispersion(b, &members) - lambda * pooled.concordant_pairs()? as f64;
    }
    Ok(total)
}

/// Concordant-pair counts: `within[a]` for client `a` alone and
/// `cross[a][b]` for pairs with one patient from each client.
struct PairTable {
    within: Vec<u64>,
    cross: Vec<Vec<u64>>,
}

impl PairTable {
    fn new(summaries: &[ClientSummary]) -> Result<Self> {
        let n = summaries.len();
        let within = summaries.iter().map(|s| s.concordant_pairs()).collect::<Result<Vec<_>>>()?;
        let mut cross = vec![vec![0; n]; n];
        for a in 0..n {
            for b in a + 1..n {
                let joint = ClientSummary::pooled([&summaries[a], &summaries[b]]).concordant_pairs()?;
                cross[a][b] = joint - within[a] - within[b];
                cross[b][a] = cross[a][b];
            }
        }
        Ok(Self { within, cross })
    }

    fn cluster_count(&self, members: &[usize]) -> u64 {
        let mut k = 0;
        for (i, &a) in members.iter().enumerate() {
            k += self.within[a];
            for &b in &members[i + 1..] {
                k += self.cross[a][b];
            }
        }
        k
    }
}

struct Search<'a> {
    b: &'a [Vec<f64>],
    table: &'a PairTable,
    lambda: f64,
    n_clusters: usize,
}

impl Search<'_> {
    fn cluster_term(&self, members: &[usize]) -> f64 {
        if members.is_empty() {
            return 0.0;
        }
        dispersion(self.b, members) - self.lambda * self.table.cluster_count(members) as f64
    }

    fn members(&self, labels: &[usize]) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.n_clusters];
        for (i, &l) in labels.iter().enumerate() {
            m[l].push(i);
        }
        m
    }

    fn total(&self, labels: &[usize]) -> f64 {
        self.members(labels).iter().map(|m| self.cluster_term(m)).sum()
    }

    /// Single-client moves until no move lowers the objective. Moves that
    /// would empty a cluster are not taken.
    fn local_search(&self, labels: &mut [usize], max_sweeps: usize) -> Vec<f64> {
        let mut history = vec![self.total(labels)];
        for _ in 0..max_sweeps {
            let mut moved = false;
            for client in 0..labels.len() {
                let groups = self.members(labels);
                let from = labels[client];
                if groups[from].len() == 1 {
                    continue;
                }
                let without: Vec<usize> = groups[from].iter().copied().filter(|&m| m != client).collect();
                let base_from = self.cluster_term(&groups[from]);
                let left_from = self.cluster_term(&without);
                let mut best: Option<(f64, usize)> = None;
                for to in (0..self.n_clusters).filter(|&c| c != from) {
                    let mut with = groups[to].clone();
                    with.push(client);
                    with.sort_unstable();
                    let change = (left_from - base_from) + (self.cluster_term(&with) - self.cluster_term(&groups[to]));
                    if best.is_none_or(|(d, _)| change < d) {
                        best = Some((change, to));
                    }
                }
                if let Some((change, to)) = best {
                    let scale = history.last().unwrap().abs().max(1.0);
                    if change < -1e-12 * scale {
                        labels[client] = to;
                        moved = true;
                    }
                }
            }
            if !moved {
                moved = self.best_swap(labels, history.last().unwrap().abs().max(1.0));
            }
            history.push(self.total(labels));
            if !moved {
                break;
            }
        }
        history
    }
}

impl Search<'_> {
    /// Applies the best exchange of two clients between clusters if it
    /// lowers the objective. Swaps keep cluster sizes, so they reach
    /// assignments single moves cannot when a cluster is a singleton.
    fn best_swap(&self, labels: &mut [usize], scale: f64) -> bool {
        let groups = self.members(labels);
        let terms: Vec<f64> = groups.iter().map(|g| self.cluster_term(g)).collect();
        let swapped = |group: &[usize], out: usize, inn: usize| {
            let mut g: Vec<usize> = group.iter().map(|&m| if m == out { inn } else { m }).collect();
            g.sort_unstable();
            g
        };
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..labels.len() {
            for b in a + 1..labels.len() {
                let (ca, cb) = (labels[a], labels[b]);
                if ca == cb {
                    continue;
                }
                let change = self.cluster_term(&swapped(&groups[ca], a, b)) + self.cluster_term(&swapped(&groups[cb], b, a))
                    - terms[ca]
                    - terms[cb];
                if best.is_none_or(|(d, _, _)| change < d) {
                    best = Some((change, a, b));
                }
            }
        }
        match best {
            Some((change, a, b)) if change < -1e-12 * scale => {
                labels.swap(a, b);
                true
            }
            _ => false,
        }
    }
}

fn random_labels(n: usize, c: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut labels = vec![0; n];
    for (rank, &client) in order.iter().enumerate() {
        labels[client] = if rank < c { rank } else { rng.random_range(0..c) };
    }
    labels
}

/// Best local optimum over `restarts` seeded random starts. Every cluster
/// keeps at least one member.
pub fn cluster_clients(
    b: &[Vec<f64>],
    summaries: &[ClientSummary],
    config: &ClusterConfig,
    seed: u64,
) -> Result<ClusterAssignment> {
    let n = b.len();
    let c = config.n_clusters;
    if c == 0 || c > n {
        return Err(Error::InvalidConfig(format!("cannot form {c} clusters from {n} clients")));
    }
    if !(config.lambda >= 0.0) || config.restarts == 0 {
        return Err(Error::InvalidConfig("lambda must be non-negative and restarts positive".into()));
    }
    check_inputs(b, &vec![0; n], c, summaries)?;
    let table = PairTable::new(summaries)?;
    let search = Search {
        b,
        table: &table,
        lambda: config.lambda,
        n_clusters: c,
    };
    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    for r in 0..config.restarts {
        let mut rng = seed::stream(seed, "cluster-restart", &[r as u64]);
        let mut labels = random_labels(n, c, &mut rng);
        let history = search.local_search(&mut labels, config.max_sweeps);
        let value = *history.last().unwrap();
        if best.as_ref().is_none_or(|(v, _, _)| value < *v) {
            best = Some((value, labels, history));
        }
    }
    let (_, labels, history) = best.expect("at least one restart");
    let objective = objective_value(b, &labels, c, config.lambda, summaries)?;
    Ok(ClusterAssignment {
        centroids: centroids(b, &labels, c),
        labels,
        objective,
        sweep_objectives: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(risk: &[f64], times: &[f64]) -> ClientSummary {
        ClientSummary {
            risk: risk.to_vec(),
            times: times.to_vec(),
            events: vec![true; risk.len()],
        }
    }

    #[test]
    fn lambda_zero_single_cluster_is_dispersion() {
        let b = vec![vec![0.0, 0.0], vec![2.0, 0.0]];
        let s = vec![summary(&[1.0], &[1.0]), summary(&[0.0], &[2.0])];
        assert_eq!(objective_value(&b, &[0, 0], 1, 0.0, &s).unwrap(), 2.0);
        assert_eq!(objective_value(&b, &[0, 1], 2, 0.0, &s).unwrap(), 0.0);
    }

    #[test]
    fn identical_vectors_cost_nothing() {
        let b = vec![vec![0.5, 1.0]; 3];
        let s = vec![summary(&[1.0], &[1.0]); 3];
        for labels in [[0, 0, 0], [0, 1, 0], [1, 1, 0]] {
            assert_eq!(objective_value(&b, &labels, 2, 0.0, &s).unwrap(), 0.0);
        }
    }

    #[test]
    fn one_cluster_per_client() {
        let b = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]];
        let s = vec![
            summary(&[2.0, 1.0], &[1.0, 2.0]),
            summary(&[1.0, 2.0], &[1.0, 2.0]),
            summary(&[3.0, 2.0, 1.0], &[1.0, 2.0, 3.0]),
        ];
        let cfg = ClusterConfig {
            n_clusters: 3,
            lambda: 0.5,
            ..ClusterConfig::default()
        };
        let a = cluster_clients(&b, &s, &cfg, 1).unwrap();
        let mut labels = a.labels.clone();
        labels.sort_unstable();
        assert_eq!(labels, vec![0, 1, 2]);
        assert!((a.objective - (-0.5 * (1.0 + 0.0 + 3.0))).abs() < 1e-12);
    }

    #[test]
    fn too_many_clusters_rejected() {
        let b = vec![vec![0.0]; 2];
        let s = vec![summary(&[0.0], &[1.0]); 2];
        let cfg = ClusterConfig {
            n_clusters: 3,
            ..ClusterConfig::default()
        };
        assert!(matches!(cluster_clients(&b, &s, &cfg, 1), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn sweeps_never_increase_objective() {
        let b: Vec<Vec<f64>> = (0..8).map(|i| vec![(i % 3) as f64, (i * i % 5) as f64 / 5.0]).collect();
        let s: Vec<ClientSummary> = (0..8)
            .map(|i| summary(&[i as f64, 1.0, -(i as f64)], &[1.0 + i as f64, 2.5, 0.5]))
            .collect();
        let cfg = ClusterConfig {
            n_clusters: 3,
            lambda: 0.05,
            ..ClusterConfig::default()
        };
        let a = cluster_clients(&b, &s, &cfg, 4).unwrap();
        for w in a.sweep_objectives.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }
}
