//! Experiment configuration and end-to-end runs.
//!
//! A config file has four parts:
//!
//! ```toml
//! [generation]        # synthetic cohorts (or `data_dir` for CSV input)
//! [federation]        # method, rounds, reputation and clustering controls
//! [dp]                # peer-channel privacy
//! [[adversaries]]     # one entry per attack profile
//! clients = [7, 8, 9]
//! t_honest = 5
//! ```
//!
//! `generation.seed` seeds the whole run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::{AdversaryProfile, AttackTarget, NoiseKind};
use crate::federation::{Federation, FederationConfig, FederationInput};
use crate::privacy::DpParams;
use crate::survival::ClientDataset;
use crate::synthetic::{generate_centers, generate_eval_cohort, GenerationConfig};
use crate::{Error, Result};

pub const EVAL_FILE: &str = "eval.csv";
pub const SERVER_FILE: &str = "server.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpSection {
    pub enabled: bool,
    pub clip_norm: f64,
    pub epsilon: f64,
    pub delta: f64,
}

impl Default for DpSection {
    fn default() -> Self {
        let p = DpParams::default();
        Self {
            enabled: true,
            clip_norm: p.clip_norm,
            epsilon: p.epsilon,
            delta: p.delta,
        }
    }
}

impl DpSection {
    pub fn params(&self) -> Option<DpParams> {
        self.enabled.then_some(DpParams {
            clip_norm: self.clip_norm,
            epsilon: self.epsilon,
            delta: self.delta,
        })
    }
}

/// One attack profile applied to every listed client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryEntry {
    pub clients: Vec<usize>,
    pub t_honest: usize,
    pub t_ramp: usize,
    pub eps_max: f64,
    pub distribution: NoiseKind,
    #[serde(default = "default_bias")]
    pub bias: f64,
    #[serde(default = "default_target")]
    pub target: AttackTarget,
}

fn default_bias() -> f64 {
    0.1
}

fn default_target() -> AttackTarget {
    AttackTarget::ModelUpdate
}

impl AdversaryEntry {
    pub fn profile(&self) -> AdversaryProfile {
        AdversaryProfile {
            t_honest: self.t_honest,
            t_ramp: self.t_ramp,
            eps_max: self.eps_max,
            distribution: self.distribution,
            bias: self.bias,
            target: self.target,
            direction: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Directory of `center_*.csv` files plus `eval.csv` (and optionally
    /// `server.csv`) used instead of synthetic generation.
    pub data_dir: Option<PathBuf>,
    pub generation: GenerationConfig,
    pub federation: FederationConfig,
    pub dp: DpSection,
    pub adversaries: Vec<AdversaryEntry>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = &cfg.data_dir {
            if dir.is_relative() {
                cfg.data_dir = Some(path.parent().unwrap_or(Path::new(".")).join(dir));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn seed(&self) -> u64 {
        self.generation.seed
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_dir.is_none() {
            self.generation.validate()?;
        }
        self.federation.validate()?;
        if let Some(p) = self.dp.params() {
            p.validate()?;
        }
        let mut seen = std::collections::HashSet::new();
        for entry in &self.adversaries {
            entry.profile().validate()?;
            for &c in &entry.clients {
                if !seen.insert(c) {
                    return Err(Error::InvalidConfig(format!("client {c} has more than one adversary profile")));
                }
            }
        }
        Ok(())
    }

    /// Profile per client for a federation of `n` clients.
    pub fn adversary_vector(&self, n: usize) -> Result<Vec<Option<AdversaryProfile>>> {
        let mut out = vec![None; n];
        for entry in &self.adversaries {
            for &c in &entry.clients {
                if c >= n {
                    return Err(Error::InvalidConfig(format!("adversary client {c} out of range for {n} clients")));
                }
                out[c] = Some(entry.profile());
            }
        }
        Ok(out)
    }
}

/// Loads `center_*.csv` in name order plus the evaluation cohorts.
pub fn load_data_dir(dir: &Path) -> Result<(Vec<String>, Vec<ClientDataset>, ClientDataset, ClientDataset)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("center_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidConfig(format!("no center_*.csv files in {}", dir.display())));
    }
    let centers = files.iter().map(ClientDataset::read_csv).collect::<Result<Vec<_>>>()?;
    let eval = ClientDataset::read_csv(dir.join(EVAL_FILE))?;
    let server_path = dir.join(SERVER_FILE);
    let server = if server_path.exists() {
        ClientDataset::read_csv(server_path)?
    } else {
        eval.clone()
    };
    let mut global: Vec<String> = eval.feature_names().to_vec();
    for c in &centers {
        for name in c.feature_names() {
            if !global.contains(name) {
                global.push(name.clone());
            }
        }
    }
    Ok((global, centers, eval, server))
}

/// Builds the federation input from synthetic generation or `data_dir`.
pub fn build_input(cfg: &ExperimentConfig) -> Result<FederationInput> {
    let (global_features, centers, eval_cohort, server_cohort) = match &cfg.data_dir {
        Some(dir) => load_data_dir(dir)?,
        None => {
            let fed = generate_centers(&cfg.generation)?;
            let eval = generate_eval_cohort(&cfg.generation, cfg.generation.eval_patients, "eval")?;
            let server = generate_eval_cohort(
                &cfg.generation,
                cfg.federation.server_validation_patients,
                "server-validation",
            )?;
            (fed.global_features, fed.centers, eval, server)
        }
    };
    let adversaries = cfg.adversary_vector(centers.len())?;
    Ok(FederationInput {
        global_features,
        centers,
        eval_cohort,
        server_cohort,
        adversaries,
    })
}

/// Initialises and runs every configured round.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Federation> {
    cfg.validate()?;
    let input = build_input(cfg)?;
    let mut fed = Federation::new(input, cfg.federation.clone(), cfg.dp.params(), cfg.seed())?;
    fed.run()?;
    Ok(fed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_defaults() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            [generation]
            n_centers = 4
            seed = 9

            [federation]
            method = "fedavg"
            update_frequency = "never"

            [dp]
            enabled = false

            [[adversaries]]
            clients = [2, 3]
            t_honest = 5
            t_ramp = 10
            eps_max = 0.2
            distribution = "static_bias"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.generation.n_centers, 4);
        assert_eq!(cfg.seed(), 9);
        assert_eq!(cfg.federation.update_frequency.frequency(), None);
        assert!(cfg.dp.params().is_none());
        let adv = cfg.adversary_vector(4).unwrap();
        assert!(adv[0].is_none() && adv[3].as_ref().unwrap().bias == 0.1);
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_duplicate_adversaries() {
        assert!(ExperimentConfig::from_toml("[federation]\nbogus = 1\n").is_err());
        let cfg = ExperimentConfig::from_toml(
            r#"
            [[adversaries]]
            clients = [1]
            t_honest = 0
            t_ramp = 1
            eps_max = 0.1
            distribution = "gaussian"
            [[adversaries]]
            clients = [1]
            t_honest = 0
            t_ramp = 1
            eps_max = 0.1
            distribution = "uniform"
            "#,
        )
        .unwrap();
        assert!(cfg.validate().is_err());
    }
}
