use assertkit_core::fusion::{
    apply_calibration, fit_calibration, greedy_select, CalibrationConfig, CalibrationModel, FusionMetric,
    GreedyConfig,
};
use assertkit_core::metrics::{eer, min_tdcf, KeyedScores, TdcfParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn keys(n_bona: usize, n_spoof: usize) -> Vec<bool> {
    (0..n_bona).map(|_| true).chain((0..n_spoof).map(|_| false)).collect()
}

fn single_metrics(scores: &[f64], labels: &[bool]) -> (f64, f64) {
    let k = KeyedScores::from_labels(scores, labels).unwrap();
    (eer(&k).0, min_tdcf(&k, &TdcfParams::default()).unwrap().0)
}

fn assert_monotone(trace: &[f64]) {
    for w in trace.windows(2) {
        assert!(w[1] <= w[0], "objective went up: {} -> {}", w[0], w[1]);
    }
}

#[test]
fn separable_system_gets_positive_weight() {
    let labels = keys(20, 30);
    let rows: Vec<Vec<f64>> =
        labels.iter().enumerate().map(|(i, &b)| vec![if b { 1.0 + i as f64 * 0.01 } else { -1.0 - i as f64 * 0.01 }]).collect();
    let fit = fit_calibration(&rows, &labels, &CalibrationConfig::default()).unwrap();
    assert!(fit.model.weights[0] > 0.0);
    assert!(fit.objective_trace.last().unwrap() < &fit.objective_trace[0]);
    assert_monotone(&fit.objective_trace);
}

#[test]
fn ideal_llrs_calibrate_to_identity() {
    // bona ~ N(1, 1), spoof ~ N(-1, 1): the log-likelihood ratio is 2x.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bona = Normal::new(1.0, 1.0).unwrap();
    let spoof = Normal::new(-1.0, 1.0).unwrap();
    let labels = keys(20_000, 20_000);
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .map(|&b| {
            let x = if b { bona.sample(&mut rng) } else { spoof.sample(&mut rng) };
            vec![2.0 * x]
        })
        .collect();
    for prior in [0.5, 0.672, 0.707] {
        let fit = fit_calibration(&rows, &labels, &CalibrationConfig::with_prior(prior)).unwrap();
        assert!((fit.model.weights[0] - 1.0).abs() < 0.1, "w = {}", fit.model.weights[0]);
        assert!(fit.model.bias.abs() < 0.1, "b = {}", fit.model.bias);
        assert_monotone(&fit.objective_trace);
    }
}

#[test]
fn uninformative_system_gets_near_zero_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n01 = Normal::new(0.0, 1.0).unwrap();
    let labels = keys(20_000, 20_000);
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .map(|&b| vec![n01.sample(&mut rng) + if b { 0.5 } else { -0.5 }, n01.sample(&mut rng)])
        .collect();
    let fit = fit_calibration(&rows, &labels, &CalibrationConfig::default()).unwrap();
    assert!(fit.model.weights[1].abs() < 0.05, "noise weight {}", fit.model.weights[1]);
    assert!(fit.model.weights[0] > 0.5);
}

#[test]
fn fit_rejects_bad_input() {
    let cfg = CalibrationConfig::default();
    assert!(fit_calibration(&[vec![1.0], vec![2.0]], &[true, true], &cfg).is_err());
    assert!(fit_calibration(&[vec![f64::NAN], vec![2.0]], &[true, false], &cfg).is_err());
    assert!(fit_calibration(&[vec![1.0], vec![2.0, 3.0]], &[true, false], &cfg).is_err());
    assert!(fit_calibration(&[], &[], &cfg).is_err());
}

#[test]
fn too_few_iterations_reports_non_convergence() {
    let labels = keys(50, 50);
    let rows: Vec<Vec<f64>> = labels.iter().map(|&b| vec![if b { 1.0 } else { -1.0 }]).collect();
    let cfg = CalibrationConfig { max_iterations: 2, ..CalibrationConfig::default() };
    assert!(matches!(
        fit_calibration(&rows, &labels, &cfg),
        Err(assertkit_core::Error::NoConvergence { iterations: 2, .. })
    ));
}

#[test]
fn positive_single_weight_preserves_eer() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let labels = keys(200, 300);
    let raw: Vec<f64> = labels.iter().map(|&b| rng.random_range(-1.0..1.0) + if b { 0.6 } else { 0.0 }).collect();
    let rows: Vec<Vec<f64>> = raw.iter().map(|&s| vec![s]).collect();
    for prior in [0.3, 0.672, 0.9] {
        let fit = fit_calibration(&rows, &labels, &CalibrationConfig::with_prior(prior)).unwrap();
        if fit.model.weights[0] > 0.0 {
            let ids: Vec<String> = (0..raw.len()).map(|i| format!("u{i}")).collect();
            let out = apply_calibration(&fit.model, &ids, &rows).unwrap();
            let calibrated: Vec<f64> = ids.iter().map(|id| out.get(id).unwrap()).collect();
            assert!((single_metrics(&calibrated, &labels).0 - single_metrics(&raw, &labels).0).abs() < 1e-12);
        }
    }
}

#[test]
fn apply_checks_dimensions() {
    let m = CalibrationModel { weights: vec![1.0, 1.0], bias: 0.0 };
    assert!(apply_calibration(&m, &["a".into()], &[vec![1.0]]).is_err());
    assert!(apply_calibration(&m, &["a".into(), "b".into()], &[vec![1.0, 2.0]]).is_err());
}

/// Two systems that each fail on a different half of the trials.
fn complementary(seed: u64) -> (Vec<bool>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n01 = Normal::new(0.0, 0.5).unwrap();
    let labels = keys(200, 400);
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (i, &bona) in labels.iter().enumerate() {
        let sign = if bona { 1.0 } else { -1.0 };
        let good = sign * 2.0 + n01.sample(&mut rng);
        let bad = n01.sample(&mut rng);
        if i % 2 == 0 {
            a.push(good);
            b.push(bad);
        } else {
            a.push(bad);
            b.push(good);
        }
    }
    (labels, a, b)
}

#[test]
fn complementary_systems_are_fused() {
    let (labels, a, b) = complementary(21);
    let systems = vec![("sys_a".to_string(), a.clone()), ("sys_b".to_string(), b.clone())];
    let plan = greedy_select(&systems, &labels, &GreedyConfig::default()).unwrap();
    assert_eq!(plan.selected.len(), 2);
    let fused = plan.steps.last().unwrap().min_tdcf;
    assert!(fused <= single_metrics(&a, &labels).1);
    assert!(fused <= single_metrics(&b, &labels).1);
    for w in plan.metric_values().windows(2) {
        assert!(w[1] <= w[0]);
    }
    for s in &plan.steps {
        assert_monotone(&s.objective_trace);
    }
    let report = plan.to_report();
    assert!(report.contains("step 1 system="));
    assert!(report.contains("step 2 system="));
}

#[test]
fn one_system_plan() {
    let (labels, a, _) = complementary(2);
    let plan = greedy_select(&[("only".into(), a)], &labels, &GreedyConfig::default()).unwrap();
    assert_eq!(plan.selected, vec!["only".to_string()]);
}

#[test]
fn duplicate_candidate_is_not_added() {
    let (labels, a, _) = complementary(4);
    let systems = vec![("a".to_string(), a.clone()), ("a_copy".to_string(), a)];
    let plan = greedy_select(&systems, &labels, &GreedyConfig::default()).unwrap();
    assert_eq!(plan.selected, vec!["a".to_string()]);
}

#[test]
fn ties_resolve_by_name() {
    let (labels, a, _) = complementary(6);
    let systems = vec![("zeta".to_string(), a.clone()), ("alpha".to_string(), a)];
    for metric in [FusionMetric::MinTdcf, FusionMetric::Eer] {
        let cfg = GreedyConfig { metric, ..GreedyConfig::default() };
        let plan = greedy_select(&systems, &labels, &cfg).unwrap();
        assert_eq!(plan.selected, vec!["alpha".to_string()]);
    }
}
