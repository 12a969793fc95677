//! Cox proportional-hazards estimation.
//!
//! The objective is the negative log partial likelihood with Breslow's
//! treatment of tied event times: every event at a given time shares the
//! same risk-set denominator. Fitting is Newton-Raphson with step-halving
//! and an optional ridge term.

use nalgebra::{DMatrix, DVector};

use super::dataset::ClientDataset;
use crate::{Error, Result};

/// Coefficient magnitude beyond which the data are treated as separable.
pub const MONOTONE_LIKELIHOOD_LIMIT: f64 = 50.0;

/// Relative slack allowed when comparing objective values near the optimum.
const ROUNDOFF: f64 = 1e-12;

/// Solver controls.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_halving_limit: usize,
    pub ridge_penalty: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tolerance: 1e-9,
            step_halving_limit: 30,
            ridge_penalty: 1e-6,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.step_halving_limit == 0 {
            return Err(Error::InvalidConfig("iteration limits must be positive".into()));
        }
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::InvalidConfig("gradient_tolerance must be positive".into()));
        }
        if !(self.ridge_penalty >= 0.0) || !self.ridge_penalty.is_finite() {
            return Err(Error::InvalidConfig("ridge_penalty must be non-negative".into()));
        }
        Ok(())
    }
}

/// Fitted coefficients plus the Breslow baseline hazard.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxModel {
    feature_names: Vec<String>,
    coefficients: Vec<f64>,
    baseline_hazard: Vec<(f64, f64)>,
}

impl CoxModel {
    pub fn new(
        feature_names: Vec<String>,
        coefficients: Vec<f64>,
        baseline_hazard: Vec<(f64, f64)>,
    ) -> Result<Self> {
        if feature_names.len() != coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: feature_names.len(),
                found: coefficients.len(),
            });
        }
        let increasing = baseline_hazard.windows(2).all(|w| w[0].0 < w[1].0);
        let non_negative = baseline_hazard.iter().all(|&(_, h)| h >= 0.0);
        if !increasing || !non_negative {
            return Err(Error::InvalidData(
                "baseline hazard needs strictly increasing times and non-negative increments".into(),
            ));
        }
        Ok(Self {
            feature_names,
            coefficients,
            baseline_hazard,
        })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// `(time, hazard increment)` at each distinct event time.
    pub fn baseline_hazard(&self) -> &[(f64, f64)] {
        &self.baseline_hazard
    }

    /// Breslow cumulative baseline hazard at `t`.
    pub fn cumulative_baseline_hazard(&self, t: f64) -> f64 {
        self.baseline_hazard
            .iter()
            .take_while(|(time, _)| *time <= t)
            .map(|(_, h)| h)
            .sum()
    }
}

/// Result of [`fit_coxph`].
#[derive(Debug, Clone)]
pub struct CoxFit {
    pub model: CoxModel,
    /// Newton steps taken.
    pub iterations: usize,
    /// Whether the gradient tolerance was met.
    pub converged: bool,
    pub gradient_norm: f64,
    /// Objective value before each step and after the last one.
    pub objective_trace: Vec<f64>,
}

/// Value, gradient and Hessian of the (ridge-penalised) objective.
#[derive(Debug, Clone)]
pub struct Derivatives {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
}

fn check_inputs(coeffs: &[f64], data: &ClientDataset) -> Result<()> {
    if coeffs.len() != data.n_features() {
        return Err(Error::DimensionMismatch {
            expected: data.n_features(),
            found: coeffs.len(),
        });
    }
    if !data.is_complete() || coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidData("covariates and coefficients must be finite".into()));
    }
    Ok(())
}

fn linear_predictor(coeffs: &[f64], data: &ClientDataset) -> Vec<f64> {
    (0..data.n_patients())
        .map(|i| data.row(i).iter().zip(coeffs).map(|(x, b)| x * b).sum())
        .collect()
}

/// Patient indices by descending time, split into groups of equal time.
fn descending_time_groups(data: &ClientDataset) -> (Vec<usize>, Vec<(usize, usize)>) {
    let times = data.event_time();
    let mut order: Vec<usize> = (0..data.n_patients()).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut groups = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && times[order[end]] == times[order[start]] {
            end += 1;
        }
        groups.push((start, end));
        start = end;
    }
    (order, groups)
}

fn objective_value(coeffs: &[f64], data: &ClientDataset, ridge: f64) -> f64 {
    let lp = linear_predictor(coeffs, data);
    let shift = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (order, groups) = descending_time_groups(data);
    let events = data.event_flag();
    let mut s0 = 0.0;
    let mut value = 0.0;
    for &(start, end) in &groups {
        for &i in &order[start..end] {
            s0 += (lp[i] - shift).exp();
        }
        let log_s0 = s0.ln() + shift;
        for &i in &order[start..end] {
            if events[i] {
                value += log_s0 - lp[i];
            }
        }
    }
    value + 0.5 * ridge * coeffs.iter().map(|b| b * b).sum::<f64>()
}

/// `-log L(beta | X)` with Breslow ties.
pub fn neg_log_partial_likelihood(coeffs: &[f64], data: &ClientDataset) -> Result<f64> {
    check_inputs(coeffs, data)?;
    if data.n_events() == 0 {
        return Err(Error::NoEvents);
    }
    Ok(objective_value(coeffs, data, 0.0))
}

/// Objective, gradient and Hessian at `coeffs` with ridge penalty
/// `ridge / 2 * |beta|^2`.
pub fn derivatives(coeffs: &[f64], data: &ClientDataset, ridge: f64) -> Result<Derivatives> {
    check_inputs(coeffs, data)?;
    if data.n_events() == 0 {
        return Err(Error::NoEvents);
    }
    let p = data.n_features();
    let lp = linear_predictor(coeffs, data);
    let shift = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (order, groups) = descending_time_groups(data);
    let events = data.event_flag();

    let mut s0 = 0.0;
    let mut s1 = vec![0.0; p];
    // Upper triangle of the weighted second moment, row-major.
    let mut s2 = vec![0.0; p * p];
    let mut value = 0.0;
    let mut gradient = vec![0.0; p];
    let mut hessian = DMatrix::<f64>::zeros(p, p);

    for &(start, end) in &groups {
        for &i in &order[start..end] {
            let w = (lp[i] - shift).exp();
            let x = data.row(i);
            s0 += w;
            for a in 0..p {
                let wa = w * x[a];
                s1[a] += wa;
                for b in a..p {
                    s2[a * p + b] += wa * x[b];
                }
            }
        }
        let deaths = order[start..end].iter().filter(|&&i| events[i]).count();
        if deaths == 0 {
            continue;
        }
        let d = deaths as f64;
        let log_s0 = s0.ln() + shift;
        for &i in order[start..end].iter().filter(|&&i| events[i]) {
            value += log_s0 - lp[i];
            for (g, x) in gradient.iter_mut().zip(data.row(i)) {
                *g -= x;
            }
        }
        for a in 0..p {
            let mean_a = s1[a] / s0;
            gradient[a] += d * mean_a;
            for b in a..p {
                let h = d * (s2[a * p + b] / s0 - mean_a * s1[b] / s0);
                hessian[(a, b)] += h;
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            hessian[(a, b)] = hessian[(b, a)];
        }
        gradient[a] += ridge * coeffs[a];
        hessian[(a, a)] += ridge;
    }
    value += 0.5 * ridge * coeffs.iter().map(|b| b * b).sum::<f64>();
    Ok(Derivatives {
        value,
        gradient,
        hessian,
    })
}

fn newton_direction(hessian: &DMatrix<f64>, gradient: &[f64]) -> Option<DVector<f64>> {
    let g = DVector::from_column_slice(gradient);
    let scale = hessian.diagonal().amax().max(1e-300);
    let mut jitter = 0.0;
    for _ in 0..8 {
        let mut h = hessian.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += jitter;
        }
        if let Some(chol) = h.cholesky() {
            return Some(chol.solve(&g));
        }
        jitter = if jitter == 0.0 { scale * 1e-10 } else { jitter * 100.0 };
    }
    None
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Newton-Raphson with step-halving from `init` (zeros when `None`).
///
/// Stops when the gradient infinity-norm drops to `gradient_tolerance`, when
/// `max_iterations` is reached, or when step-halving cannot find a
/// non-increasing step; the last two come back with `converged == false`.
pub fn fit_coxph(data: &ClientDataset, init: Option<&[f64]>, config: &FitConfig) -> Result<CoxFit> {
    config.validate()?;
    let p = data.n_features();
    let mut beta = match init {
        Some(b) => b.to_vec(),
        None => vec![0.0; p],
    };
    check_inputs(&beta, data)?;
    if data.n_events() == 0 {
        return Err(Error::NoEvents);
    }
    let ridge = config.ridge_penalty;

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm;
    loop {
        let d = derivatives(&beta, data, ridge)?;
        if !d.value.is_finite() {
            return Err(Error::FitDiverged { iterations });
        }
        trace.push(d.value);
        grad_norm = inf_norm(&d.gradient);
        if grad_norm <= config.gradient_tolerance {
            converged = true;
            break;
        }
        if iterations >= config.max_iterations {
            break;
        }
        let Some(step) = newton_direction(&d.hessian, &d.gradient) else {
            return Err(Error::FitDiverged { iterations });
        };
        let slack = ROUNDOFF * d.value.abs().max(1.0);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=config.step_halving_limit {
            let candidate: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b - scale * s).collect();
            let v = objective_value(&candidate, data, ridge);
            if v.is_finite() && v <= d.value + slack {
                accepted = Some(candidate);
                break;
            }
            scale *= 0.5;
        }
        let Some(next) = accepted else {
            break;
        };
        beta = next;
        iterations += 1;
        let max_abs = inf_norm(&beta);
        if max_abs > MONOTONE_LIKELIHOOD_LIMIT {
            return Err(Error::MonotoneLikelihood {
                max_abs,
                limit: MONOTONE_LIKELIHOOD_LIMIT,
            });
        }
    }

    let baseline = breslow_baseline(&beta, data)?;
    let model = CoxModel::new(data.feature_names().to_vec(), beta, baseline)?;
    Ok(CoxFit {
        model,
        iterations,
        converged,
        gradient_norm: grad_norm,
        objective_trace: trace,
    })
}

/// Breslow increments `d_i / sum_{j in R(t_i)} exp(beta' x_j)` at each
/// distinct event time, in increasing time order.
pub fn breslow_baseline(coeffs: &[f64], data: &ClientDataset) -> Result<Vec<(f64, f64)>> {
    check_inputs(coeffs, data)?;
    let lp = linear_predictor(coeffs, data);
    let shift = lp.iter().copied().fold(0.0, f64::max);
    let (order, groups) = descending_time_groups(data);
    let events = data.event_flag();
    let times = data.event_time();
    let mut s0 = 0.0;
    let mut out = Vec::new();
    for &(start, end) in &groups {
        for &i in &order[start..end] {
            s0 += (lp[i] - shift).exp();
        }
        let deaths = order[start..end].iter().filter(|&&i| events[i]).count();
        if deaths > 0 {
            out.push((times[order[start]], deaths as f64 / s0 / shift.exp()));
        }
    }
    out.reverse();
    Ok(out)
}

/// Linear predictor `beta' x` per patient, matching features by name.
/// Model features absent from the data, and missing cells, contribute 0.
pub fn risk_scores(model: &CoxModel, data: &ClientDataset) -> Vec<f64> {
    let columns: Vec<(usize, f64)> = model
        .feature_names()
        .iter()
        .zip(model.coefficients())
        .filter_map(|(name, &b)| data.feature_index(name).map(|c| (c, b)))
        .collect();
    (0..data.n_patients())
        .map(|i| {
            columns
                .iter()
                .map(|&(c, b)| {
                    let x = data.value(i, c);
                    if x.is_nan() {
                        0.0
                    } else {
                        b * x
                    }
                })
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(rows: &[&[f64]], times: &[f64], events: &[bool]) -> ClientDataset {
        let p = rows.first().map_or(0, |r| r.len());
        let names = (0..p).map(|i| format!("x{i}")).collect();
        let cov = rows.iter().flat_map(|r| r.iter().copied()).collect();
        ClientDataset::new(names, cov, times.to_vec(), events.to_vec()).unwrap()
    }

    #[test]
    fn zero_coefficients_three_events() {
        let ds = dataset(&[&[0.3], &[-1.0], &[2.0]], &[1.0, 2.0, 3.0], &[true; 3]);
        let v = neg_log_partial_likelihood(&[0.0], &ds).unwrap();
        assert!((v - 6f64.ln()).abs() < 1e-12);
        assert!((v - 1.791759469228055).abs() < 1e-12);
    }

    #[test]
    fn zero_coefficients_sum_of_log_risk_set_sizes() {
        // Risk sets: t=1 -> 5, t=2 (two tied events) -> 4 each, t=4 -> 1.
        let ds = dataset(
            &[&[1.0], &[2.0], &[3.0], &[4.0], &[5.0]],
            &[1.0, 2.0, 2.0, 3.0, 4.0],
            &[true, true, true, false, true],
        );
        let v = neg_log_partial_likelihood(&[0.0], &ds).unwrap();
        let expected = 5f64.ln() + 2.0 * 4f64.ln() + 1f64.ln();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn single_patient_is_zero() {
        let ds = dataset(&[&[1.3]], &[2.0], &[true]);
        assert_eq!(neg_log_partial_likelihood(&[0.7], &ds).unwrap(), 0.0);
    }

    #[test]
    fn no_events_and_invalid_inputs() {
        let ds = dataset(&[&[1.0], &[2.0]], &[1.0, 2.0], &[false, false]);
        assert!(matches!(neg_log_partial_likelihood(&[0.0], &ds), Err(Error::NoEvents)));
        let ds = dataset(&[&[f64::INFINITY], &[2.0]], &[1.0, 2.0], &[true, false]);
        assert!(matches!(neg_log_partial_likelihood(&[0.0], &ds), Err(Error::InvalidData(_))));
    }

    #[test]
    fn breslow_without_ties() {
        let ds = dataset(&[&[1.0], &[5.0], &[-3.0]], &[1.0, 2.0, 3.0], &[true; 3]);
        let h = breslow_baseline(&[0.0], &ds).unwrap();
        assert_eq!(h, vec![(1.0, 1.0 / 3.0), (2.0, 0.5), (3.0, 1.0)]);
    }

    #[test]
    fn breslow_tied_events() {
        let ds = dataset(
            &[&[0.0], &[0.0], &[0.0], &[0.0]],
            &[2.0, 2.0, 3.0, 4.0],
            &[true, true, false, false],
        );
        let h = breslow_baseline(&[0.0], &ds).unwrap();
        assert_eq!(h, vec![(2.0, 0.5)]);
    }

    #[test]
    fn breslow_no_events_is_empty() {
        let ds = dataset(&[&[1.0], &[2.0]], &[1.0, 2.0], &[false, false]);
        assert!(breslow_baseline(&[0.3], &ds).unwrap().is_empty());
    }

    #[test]
    fn risk_scores_are_dot_products() {
        let ds = dataset(&[&[2.0, 5.0], &[-1.0, 1.0]], &[1.0, 2.0], &[true, true]);
        let names = ds.feature_names().to_vec();
        let m = CoxModel::new(names.clone(), vec![1.0, 0.0], vec![]).unwrap();
        assert_eq!(risk_scores(&m, &ds), vec![2.0, -1.0]);
        let m = CoxModel::new(names.clone(), vec![1.0, 1.0], vec![]).unwrap();
        assert_eq!(risk_scores(&m, &ds)[1], 0.0);
        let m = CoxModel::new(names, vec![0.0, 0.0], vec![]).unwrap();
        assert_eq!(risk_scores(&m, &ds), vec![0.0, 0.0]);
    }

    #[test]
    fn risk_scores_ignore_absent_features() {
        let ds = dataset(&[&[2.0]], &[1.0], &[true]);
        let m = CoxModel::new(vec!["x0".into(), "other".into()], vec![1.5, 9.0], vec![]).unwrap();
        assert_eq!(risk_scores(&m, &ds), vec![3.0]);
    }

    #[test]
    fn constant_column_gets_zero_coefficient_under_ridge() {
        let ds = dataset(
            &[&[1.0, 0.2], &[1.0, -0.4], &[1.0, 1.1], &[1.0, 0.0], &[1.0, -0.9]],
            &[1.0, 2.0, 3.0, 4.0, 5.0],
            &[true, true, false, true, true],
        );
        let cfg = FitConfig {
            ridge_penalty: 0.1,
            ..FitConfig::default()
        };
        let fit = fit_coxph(&ds, None, &cfg).unwrap();
        assert!(fit.converged);
        assert!(fit.model.coefficients()[0].abs() < 1e-12);
    }

    #[test]
    fn refit_from_solution_takes_at_most_two_steps() {
        let ds = dataset(
            &[&[0.5], &[-0.2], &[1.5], &[0.1], &[-1.0], &[0.7]],
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            &[true, false, true, true, true, false],
        );
        let cfg = FitConfig::default();
        let first = fit_coxph(&ds, None, &cfg).unwrap();
        assert!(first.converged);
        let again = fit_coxph(&ds, Some(first.model.coefficients()), &cfg).unwrap();
        assert!(again.converged);
        assert!(again.iterations <= 2);
    }

    #[test]
    fn separable_data_is_reported() {
        // Higher covariate always fails first: the likelihood is monotone.
        // Small covariate spacing makes the coefficient escape quickly.
        let ds = dataset(
            &[&[0.04], &[0.03], &[0.02], &[0.01]],
            &[1.0, 2.0, 3.0, 4.0],
            &[true; 4],
        );
        let cfg = FitConfig {
            ridge_penalty: 0.0,
            ..FitConfig::default()
        };
        assert!(matches!(fit_coxph(&ds, None, &cfg), Err(Error::MonotoneLikelihood { .. })));
    }

    #[test]
    fn invalid_config_rejected() {
        let ds = dataset(&[&[1.0]], &[1.0], &[true]);
        let cfg = FitConfig {
            max_iterations: 0,
            ..FitConfig::default()
        };
        assert!(matches!(fit_coxph(&ds, None, &cfg), Err(Error::InvalidConfig(_))));
    }
}
