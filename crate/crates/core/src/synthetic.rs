//! Synthetic multi-center survival cohorts.
//!
//! Every center carries the shared features plus a random selection of the
//! remaining global features. Covariates are i.i.d. `N(0, 1/p)` with `p` the
//! center's feature count, event times follow an exponential Cox law, censor
//! times are uniform on `[0, c_scale * ln 2 / exp(beta' x)]` with `c_scale`
//! tuned to a target censor fraction, and a fraction of columns is then
//! masked completely at random.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::survival::ClientDataset;
use crate::{Error, Result};

/// Largest allowed deviation between realised and target censor fraction.
pub const CENSOR_RATE_TOLERANCE: f64 = 0.02;

/// Parameters of the simulated federation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub n_centers: usize,
    pub patients_per_center: usize,
    pub global_features: usize,
    pub shared_features: usize,
    pub local_feature_count: usize,
    /// Fraction of each center's columns that receive missing values.
    pub missing_fraction: f64,
    /// Per-column missing rate range `[rho_min, rho_max]`.
    pub missing_range: (f64, f64),
    /// Target censor fraction; `0` disables censoring.
    pub target_censor_rate: f64,
    /// Coefficients over the global features. Drawn from
    /// `N(0, beta_scale^2)` when absent.
    pub true_beta: Option<Vec<f64>>,
    pub beta_scale: f64,
    /// Size of the held-out evaluation cohort, which carries every feature.
    pub eval_patients: usize,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            n_centers: 10,
            patients_per_center: 500,
            global_features: 50,
            shared_features: 10,
            local_feature_count: 25,
            missing_fraction: 0.1,
            missing_range: (0.0, 0.3),
            target_censor_rate: 0.4,
            true_beta: None,
            beta_scale: 1.0,
            eval_patients: 2000,
            seed: 1,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.n_centers == 0 || self.patients_per_center == 0 || self.global_features == 0 {
            return bad("n_centers, patients_per_center and global_features must be positive");
        }
        if self.local_feature_count == 0 {
            return bad("local_feature_count must be positive");
        }
        if self.shared_features > self.local_feature_count || self.local_feature_count > self.global_features {
            return bad("need shared_features <= local_feature_count <= global_features");
        }
        if !(0.0..=1.0).contains(&self.missing_fraction) {
            return bad("missing_fraction must lie in [0, 1]");
        }
        let (lo, hi) = self.missing_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad("missing_range must satisfy 0 <= rho_min <= rho_max <= 1");
        }
        if !(0.0..1.0).contains(&self.target_censor_rate) {
            return bad("target_censor_rate must lie in [0, 1)");
        }
        if let Some(beta) = &self.true_beta {
            if beta.len() != self.global_features {
                return bad("true_beta length must equal global_features");
            }
            if beta.iter().any(|b| !b.is_finite()) {
                return bad("true_beta must be finite");
            }
        }
        if !(self.beta_scale.is_finite() && self.beta_scale >= 0.0) {
            return bad("beta_scale must be a non-negative number");
        }
        Ok(())
    }

    /// Global feature identifiers `f00, f01, ...`.
    pub fn feature_names(&self) -> Vec<String> {
        global_feature_names(self.global_features)
    }

    /// The configured coefficients, or the seeded draw when none are given.
    pub fn resolved_beta(&self) -> Vec<f64> {
        match &self.true_beta {
            Some(b) => b.clone(),
            None => {
                let mut rng = seed::stream(self.seed, "true-beta", &[]);
                let normal = Normal::new(0.0, 1.0).expect("unit normal");
                (0..self.global_features)
                    .map(|_| self.beta_scale * normal.sample(&mut rng))
                    .collect()
            }
        }
    }
}

pub fn global_feature_names(n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len().max(2);
    (0..n).map(|i| format!("f{i:0width$}")).collect()
}

/// Fraction of non-null values per global feature (0 where absent).
#[derive(Debug, Clone, PartialEq)]
pub struct CompletenessVector {
    pub values: Vec<f64>,
}

pub fn completeness_vector(data: &ClientDataset, global_features: &[String]) -> CompletenessVector {
    let n = data.n_patients();
    let values = global_features
        .iter()
        .map(|name| match data.feature_index(name) {
            Some(col) if n > 0 => data.observed_count(col) as f64 / n as f64,
            _ => 0.0,
        })
        .collect();
    CompletenessVector { values }
}

/// Missing rate drawn for one masked column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingColumn {
    pub feature: String,
    pub rate: f64,
}

/// Masks `round_half_up(alpha * columns)` uniformly chosen columns, each at
/// its own rate drawn from `U[rho_min, rho_max]`.
pub fn apply_missingness(
    data: &ClientDataset,
    alpha: f64,
    rho_min: f64,
    rho_max: f64,
    seed: u64,
) -> Result<(ClientDataset, Vec<MissingColumn>)> {
    if !(0.0..=1.0).contains(&alpha) || !(0.0 <= rho_min && rho_min <= rho_max && rho_max <= 1.0) {
        return Err(Error::InvalidConfig("invalid missingness parameters".into()));
    }
    let p = data.n_features();
    let n = data.n_patients();
    let k = ((alpha * p as f64) + 0.5).floor().min(p as f64) as usize;
    let mut rng = seed::stream(seed, "missingness", &[]);
    let mut columns = sample(&mut rng, p, k).into_vec();
    columns.sort_unstable();
    let mut mask = data.missing_mask().to_vec();
    let mut drawn = Vec::with_capacity(k);
    for &col in &columns {
        let rate = if rho_max > rho_min {
            rng.random_range(rho_min..=rho_max)
        } else {
            rho_min
        };
        for i in 0..n {
            if rng.random::<f64>() < rate {
                mask[i * p + col] = true;
            }
        }
        drawn.push(MissingColumn {
            feature: data.feature_names()[col].clone(),
            rate,
        });
    }
    Ok((data.with_missing(mask)?, drawn))
}

/// Censoring outcome of [`generate_outcomes`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensoringDraw {
    /// `None` when censoring is disabled.
    pub c_scale: Option<f64>,
    pub realized_rate: f64,
}

/// Analytic censor fraction for a given `c_scale`: `(1 - 2^-c) / (c ln 2)`.
pub fn expected_censor_fraction(c_scale: f64) -> f64 {
    let l = std::f64::consts::LN_2;
    (1.0 - (-c_scale * l).exp()) / (c_scale * l)
}

fn censor_fraction(c_scale: f64, latent: &[f64], unit_censor: &[f64], scale: &[f64]) -> f64 {
    let censored = latent
        .iter()
        .zip(unit_censor)
        .zip(scale)
        .filter(|((&tau, &u), &s)| u * c_scale * s < tau)
        .count();
    censored as f64 / latent.len().max(1) as f64
}

/// Draws latent exponential event times and tuned uniform censor times.
///
/// `true_beta` is indexed by `global_features`; features the center lacks
/// contribute nothing. `target_censor_rate = None` disables censoring.
pub fn generate_outcomes(
    data: &ClientDataset,
    global_features: &[String],
    true_beta: &[f64],
    target_censor_rate: Option<f64>,
    seed: u64,
) -> Result<(ClientDataset, CensoringDraw)> {
    if true_beta.len() != global_features.len() {
        return Err(Error::DimensionMismatch {
            expected: global_features.len(),
            found: true_beta.len(),
        });
    }
    let coeffs: Vec<f64> = data
        .feature_names()
        .iter()
        .map(|name| {
            global_features
                .iter()
                .position(|g| g == name)
                .map_or(0.0, |g| true_beta[g])
        })
        .collect();
    let n = data.n_patients();
    let mut rng = seed::stream(seed, "outcomes", &[]);
    let mut latent = Vec::with_capacity(n);
    let mut unit_censor = Vec::with_capacity(n);
    let mut half_life = Vec::with_capacity(n);
    for i in 0..n {
        let lp: f64 = data
            .row(i)
            .iter()
            .zip(&coeffs)
            .map(|(x, b)| if x.is_nan() { 0.0 } else { x * b })
            .sum();
        let hazard = lp.exp();
        let u: f64 = 1.0 - rng.random::<f64>();
        latent.push(-u.ln() / hazard);
        unit_censor.push(rng.random::<f64>());
        half_life.push(std::f64::consts::LN_2 / hazard);
    }

    let target = target_censor_rate.filter(|&g| g > 0.0);
    let (c_scale, realized) = match target {
        None => (None, 0.0),
        Some(gamma) => {
            let (c, rate) = tune_censor_scale(gamma, &latent, &unit_censor, &half_life)?;
            (Some(c), rate)
        }
    };
    let mut times = Vec::with_capacity(n);
    let mut events = Vec::with_capacity(n);
    for i in 0..n {
        match c_scale {
            Some(c) => {
                let censor = unit_censor[i] * c * half_life[i];
                times.push(latent[i].min(censor));
                events.push(latent[i] <= censor);
            }
            None => {
                times.push(latent[i]);
                events.push(true);
            }
        }
    }
    Ok((
        data.with_outcomes(times, events)?,
        CensoringDraw {
            c_scale,
            realized_rate: realized,
        },
    ))
}

/// Bisection on `c_scale`; the censor fraction is non-increasing in it.
fn tune_censor_scale(gamma: f64, latent: &[f64], unit: &[f64], scale: &[f64]) -> Result<(f64, f64)> {
    let frac = |c: f64| censor_fraction(c, latent, unit, scale);
    let mut lo = 1e-9;
    let mut hi = 1.0;
    while frac(hi) > gamma && hi < 1e12 {
        lo = hi;
        hi *= 2.0;
    }
    let mut best = (hi, frac(hi));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = frac(mid);
        if (f - gamma).abs() < (best.1 - gamma).abs() {
            best = (mid, f);
        }
        if f > gamma {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    if (best.1 - gamma).abs() > CENSOR_RATE_TOLERANCE {
        return Err(Error::CensorRateUnreachable {
            target: gamma,
            achieved: best.1,
        });
    }
    Ok(best)
}

fn draw_covariates(n: usize, p: usize, seed: u64, tag: &str, index: u64) -> Vec<f64> {
    let mut rng = seed::stream(seed, tag, &[index]);
    let normal = Normal::new(0.0, (1.0 / p as f64).sqrt()).expect("finite std");
    (0..n * p).map(|_| normal.sample(&mut rng)).collect()
}

/// Record of the random draws behind one center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterMetadata {
    pub center: usize,
    pub features: Vec<String>,
    pub missing_columns: Vec<MissingColumn>,
    pub c_scale: Option<f64>,
    pub realized_censor_rate: f64,
}

/// Everything produced by [`generate_centers`].
#[derive(Debug, Clone)]
pub struct SyntheticFederation {
    pub global_features: Vec<String>,
    pub true_beta: Vec<f64>,
    pub centers: Vec<ClientDataset>,
    pub metadata: Vec<CenterMetadata>,
}

#[derive(Serialize)]
struct MetadataFile<'a> {
    seed: u64,
    global_features: &'a [String],
    true_beta: &'a [f64],
    centers: &'a [CenterMetadata],
}

impl SyntheticFederation {
    /// Sidecar with the drawn feature sets, missing rates and censor scales.
    pub fn metadata_toml(&self, seed: u64) -> Result<String> {
        let file = MetadataFile {
            seed,
            global_features: &self.global_features,
            true_beta: &self.true_beta,
            centers: &self.metadata,
        };
        toml::to_string(&file).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    /// Writes `center_XX.csv` per center plus `metadata.toml`.
    pub fn write_dir(&self, dir: &Path, seed: u64) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, center) in self.centers.iter().enumerate() {
            center.write_csv(dir.join(center_file_name(i)))?;
        }
        std::fs::write(dir.join("metadata.toml"), self.metadata_toml(seed)?)?;
        Ok(())
    }
}

pub fn center_file_name(index: usize) -> String {
    format!("center_{index:02}.csv")
}

/// Features of one center: the shared block plus a seeded selection of the
/// rest, in global order.
pub fn center_features(config: &GenerationConfig, center: usize) -> Vec<usize> {
    let extra = config.local_feature_count - config.shared_features;
    let pool = config.global_features - config.shared_features;
    let mut rng = seed::stream(config.seed, "center-features", &[center as u64]);
    let mut chosen: Vec<usize> = (0..config.shared_features)
        .chain(sample(&mut rng, pool, extra).into_iter().map(|i| i + config.shared_features))
        .collect();
    chosen.sort_unstable();
    chosen
}

fn build_center(
    config: &GenerationConfig,
    names: &[String],
    beta: &[f64],
    center: usize,
) -> Result<(ClientDataset, CenterMetadata)> {
    let features = center_features(config, center);
    let p = features.len();
    let n = config.patients_per_center;
    let idx = center as u64;
    let covariates = draw_covariates(n, p, config.seed, "center-covariates", idx);
    let feature_names: Vec<String> = features.iter().map(|&f| names[f].clone()).collect();
    let blank = ClientDataset::new(feature_names.clone(), covariates, vec![0.0; n], vec![false; n])?;
    let (with_outcomes, censoring) = generate_outcomes(
        &blank,
        names,
        beta,
        Some(config.target_censor_rate),
        seed::derive(config.seed, "center-outcomes", &[idx]),
    )?;
    let (rho_min, rho_max) = config.missing_range;
    let (masked, missing_columns) = apply_missingness(
        &with_outcomes,
        config.missing_fraction,
        rho_min,
        rho_max,
        seed::derive(config.seed, "center-missing", &[idx]),
    )?;
    let meta = CenterMetadata {
        center,
        features: feature_names,
        missing_columns,
        c_scale: censoring.c_scale,
        realized_censor_rate: censoring.realized_rate,
    };
    Ok((masked, meta))
}

/// Generates every center in parallel from per-center derived seeds.
pub fn generate_centers(config: &GenerationConfig) -> Result<SyntheticFederation> {
    config.validate()?;
    let names = config.feature_names();
    let beta = config.resolved_beta();
    let built: Vec<(ClientDataset, CenterMetadata)> = (0..config.n_centers)
        .into_par_iter()
        .map(|c| build_center(config, &names, &beta, c))
        .collect::<Result<_>>()?;
    let (centers, metadata) = built.into_iter().unzip();
    Ok(SyntheticFederation {
        global_features: names,
        true_beta: beta,
        centers,
        metadata,
    })
}

/// Held-out cohort with every global feature, no missingness, drawn from the
/// same law as the centers.
pub fn generate_eval_cohort(config: &GenerationConfig, n_patients: usize, tag: &str) -> Result<ClientDataset> {
    config.validate()?;
    let names = config.feature_names();
    let beta = config.resolved_beta();
    let p = names.len();
    let covariates = draw_covariates(n_patients, p, config.seed, tag, 0);
    let blank = ClientDataset::new(names.clone(), covariates, vec![0.0; n_patients], vec![false; n_patients])?;
    let (cohort, _) = generate_outcomes(
        &blank,
        &names,
        &beta,
        Some(config.target_censor_rate),
        seed::derive(config.seed, tag, &[1]),
    )?;
    Ok(cohort)
}
