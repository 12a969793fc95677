use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use repfed::seed;
use repfed::survival::{
    breslow_baseline, concordance_index, derivatives, fit_coxph, neg_log_partial_likelihood, pair_counts, risk_scores,
    ClientDataset, CoxModel, FitConfig,
};
use repfed::synthetic::generate_outcomes;
use repfed::Error;

fn brute_force(scores: &[f64], times: &[f64], events: &[bool]) -> (u64, u64, u64) {
    let (mut p, mut c, mut t) = (0, 0, 0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if events[i] && times[i] < times[j] {
                p += 1;
                if scores[i] > scores[j] {
                    c += 1;
                } else if scores[i] == scores[j] {
                    t += 1;
                }
            }
        }
    }
    (p, c, t)
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec((0i32..6).prop_map(f64::from), n),
            prop::collection::vec((0i32..10).prop_map(f64::from), n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

/// Partial likelihood with Breslow ties written out directly.
fn npll_oracle(beta: &[f64], data: &ClientDataset) -> f64 {
    let n = data.n_patients();
    let lp: Vec<f64> = (0..n).map(|i| data.row(i).iter().zip(beta).map(|(x, b)| x * b).sum()).collect();
    let t = data.event_time();
    let d = data.event_flag();
    let mut total = 0.0;
    for i in 0..n {
        if d[i] {
            let risk: f64 = (0..n).filter(|&j| t[j] >= t[i]).map(|j| lp[j].exp()).sum();
            total += lp[i] - risk.ln();
        }
    }
    -total
}

fn random_data(n: usize, p: usize, rng: &mut seed::SimRng) -> ClientDataset {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let x: Vec<f64> = (0..n * p).map(|_| normal.sample(rng)).collect();
    let times: Vec<f64> = (0..n).map(|_| rng.random_range(1..8) as f64).collect();
    let mut events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
    events[0] = true;
    ClientDataset::new((0..p).map(|k| format!("x{k}")).collect(), x, times, events).unwrap()
}

proptest! {
    #[test]
    fn pair_counts_match_enumeration((s, t, e) in instance()) {
        let c = pair_counts(&s, &t, &e).unwrap();
        prop_assert_eq!((c.permissible, c.concordant, c.tied), brute_force(&s, &t, &e));
    }

    #[test]
    fn c_index_invariant_under_increasing_maps((s, t, e) in instance(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let mapped: Vec<f64> = s.iter().map(|x| (a * x + b).exp()).collect();
        prop_assert_eq!(concordance_index(&s, &t, &e).ok(), concordance_index(&mapped, &t, &e).ok());
    }

    #[test]
    fn negated_scores_reflect_c_index((s, t, e) in instance()) {
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        if let (Ok(a), Ok(b)) = (concordance_index(&s, &t, &e), concordance_index(&neg, &t, &e)) {
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn likelihood_matches_direct_sum(seed_val in 0u64..1000, n in 3usize..25, p in 1usize..4) {
        let mut rng = seed::stream(seed_val, "npll", &[]);
        let data = random_data(n, p, &mut rng);
        let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
        let got = neg_log_partial_likelihood(&beta, &data).unwrap();
        let want = npll_oracle(&beta, &data);
        prop_assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0));
    }
}

#[test]
fn hessian_matches_gradient_differences() {
    let mut rng = seed::stream(5, "hessian", &[]);
    for _ in 0..20 {
        let data = random_data(20, 3, &mut rng);
        let beta: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = derivatives(&beta, &data, 0.1).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut up = beta.clone();
            let mut dn = beta.clone();
            up[k] += h;
            dn[k] -= h;
            let gu = derivatives(&up, &data, 0.1).unwrap().gradient;
            let gd = derivatives(&dn, &data, 0.1).unwrap().gradient;
            for l in 0..3 {
                let fd = (gu[l] - gd[l]) / (2.0 * h);
                assert!((d.hessian[(l, k)] - fd).abs() < 1e-5 * fd.abs().max(1.0), "H[{l},{k}] {} vs {fd}", d.hessian[(l, k)]);
            }
        }
    }
}

#[test]
fn ridge_enters_value_and_gradient() {
    let mut rng = seed::stream(6, "ridge", &[]);
    let data = random_data(15, 2, &mut rng);
    let beta = [0.3, -0.7];
    let plain = derivatives(&beta, &data, 0.0).unwrap();
    let ridged = derivatives(&beta, &data, 0.5).unwrap();
    let sq: f64 = beta.iter().map(|b| b * b).sum();
    assert!((ridged.value - plain.value - 0.25 * sq).abs() < 1e-12);
    for k in 0..2 {
        assert!((ridged.gradient[k] - plain.gradient[k] - 0.5 * beta[k]).abs() < 1e-12);
    }
}

#[test]
fn breslow_increments_follow_risk_sets() {
    let mut rng = seed::stream(7, "breslow", &[]);
    let data = random_data(30, 2, &mut rng);
    let beta = [0.4, -0.2];
    let base = breslow_baseline(&beta, &data).unwrap();
    let t = data.event_time();
    let d = data.event_flag();
    let lp: Vec<f64> = (0..30).map(|i| data.row(i)[0] * beta[0] + data.row(i)[1] * beta[1]).collect();
    let mut event_times: Vec<f64> = (0..30).filter(|&i| d[i]).map(|i| t[i]).collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    assert_eq!(base.len(), event_times.len());
    for (&(time, inc), &want_time) in base.iter().zip(&event_times) {
        let deaths = (0..30).filter(|&i| d[i] && t[i] == want_time).count() as f64;
        let risk: f64 = (0..30).filter(|&i| t[i] >= want_time).map(|i| lp[i].exp()).sum();
        assert_eq!(time, want_time);
        assert!((inc - deaths / risk).abs() < 1e-12);
    }
    // At beta = 0 the increments are deaths over the number still at risk.
    let total: f64 = breslow_baseline(&[0.0, 0.0], &data).unwrap().iter().map(|p| p.1).sum();
    let na: f64 = event_times
        .iter()
        .map(|&s| (0..30).filter(|&i| d[i] && t[i] == s).count() as f64 / (0..30).filter(|&i| t[i] >= s).count() as f64)
        .sum();
    assert!((total - na).abs() < 1e-12);
}

#[test]
fn planted_coefficients_recovered() {
    let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
    let truth = [0.8, -0.5, 0.0];
    let mut rng = seed::stream(11, "recover", &[]);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let x: Vec<f64> = (0..3000 * 3).map(|_| normal.sample(&mut rng)).collect();
    let shell = ClientDataset::new(names.clone(), x, vec![1.0; 3000], vec![true; 3000]).unwrap();
    let (data, _) = generate_outcomes(&shell, &names, &truth, Some(0.3), 11).unwrap();
    let fit = fit_coxph(&data, None, &FitConfig::default()).unwrap();
    assert!(fit.converged);
    for (b, t) in fit.model.coefficients().iter().zip(&truth) {
        assert!((b - t).abs() < 0.1, "{b} vs {t}");
    }
    // Every accepted Newton step lowers the objective.
    for w in fit.objective_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
    }
}

#[test]
fn no_events_is_an_error() {
    let data = ClientDataset::new(vec!["a".into()], vec![0.1, 0.2, 0.3], vec![1.0, 2.0, 3.0], vec![false; 3]).unwrap();
    assert!(matches!(fit_coxph(&data, None, &FitConfig::default()), Err(Error::NoEvents)));
}

#[test]
fn risk_scores_align_by_name() {
    let model = CoxModel::new(vec!["b".into(), "a".into(), "z".into()], vec![2.0, 1.0, 5.0], Vec::new()).unwrap();
    let data = ClientDataset::new(vec!["a".into(), "b".into()], vec![1.0, 0.0, 0.0, 1.0], vec![1.0, 2.0], vec![true, true]).unwrap();
    assert_eq!(risk_scores(&model, &data), vec![1.0, 2.0]);
}

#[test]
fn csv_round_trip_keeps_missing_cells() {
    let mut rng = seed::stream(12, "csv", &[]);
    let data = random_data(12, 3, &mut rng);
    let mut mask = data.missing_mask().to_vec();
    mask[4] = true;
    mask[30] = true;
    let data = data.with_missing(mask).unwrap();
    let mut buf = Vec::new();
    data.to_writer(&mut buf).unwrap();
    let back = ClientDataset::from_reader(buf.as_slice()).unwrap();
    assert_eq!(back.missing_mask(), data.missing_mask());
    assert_eq!(back.event_time(), data.event_time());
    assert_eq!(back.event_flag(), data.event_flag());
    for i in 0..12 {
        for k in 0..3 {
            if !data.is_missing(i, k) {
                assert_eq!(back.value(i, k), data.value(i, k));
            }
        }
    }
}
