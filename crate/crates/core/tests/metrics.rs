use assertkit_core::metrics::{eer, min_tdcf, rate_curve, KeyedScores, MetricReport, TdcfParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scores with random keys; every other set is rounded to produce ties.
fn random_set(rng: &mut ChaCha8Rng, n: usize, coarse: bool) -> KeyedScores {
    loop {
        let shift: f64 = rng.random_range(0.0..2.0);
        let mut bona = Vec::new();
        let mut spoof = Vec::new();
        for _ in 0..n {
            let is_bona = rng.random_bool(0.5);
            let mut s: f64 = rng.random_range(-3.0..3.0) + if is_bona { shift } else { 0.0 };
            if coarse {
                s = (s * 4.0).round() / 4.0;
            }
            if is_bona {
                bona.push(s);
            } else {
                spoof.push(s);
            }
        }
        if !bona.is_empty() && !spoof.is_empty() {
            return KeyedScores::new(bona, spoof).unwrap();
        }
    }
}

fn rates_at(k: &KeyedScores, theta: f64) -> (f64, f64) {
    let miss = k.bonafide.iter().filter(|&&s| s < theta).count() as f64 / k.bonafide.len() as f64;
    let fa = k.spoof.iter().filter(|&&s| s >= theta).count() as f64 / k.spoof.len() as f64;
    (miss, fa)
}

fn brute_thresholds(k: &KeyedScores) -> Vec<f64> {
    let mut t: Vec<f64> = k.bonafide.iter().chain(&k.spoof).copied().collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t.push(f64::INFINITY);
    t
}

/// Exhaustive sweep: first threshold where the miss rate reaches the
/// false-alarm rate, linearly interpolated with the previous one.
fn brute_eer(k: &KeyedScores) -> f64 {
    let pts: Vec<(f64, f64)> = brute_thresholds(k).iter().map(|&t| rates_at(k, t)).collect();
    for (i, &(m, f)) in pts.iter().enumerate() {
        if m >= f {
            if m == f || i == 0 {
                return m;
            }
            let (m0, f0) = pts[i - 1];
            let a = (f0 - m0) / ((m - f) - (m0 - f0));
            return m0 + a * (m - m0);
        }
    }
    unreachable!()
}

fn brute_tdcf(k: &KeyedScores, p: &TdcfParams) -> f64 {
    let c1 = p.p_tar * (p.c_miss_cm - p.c_miss_asv * p.p_miss_asv) - p.p_non * p.c_fa_asv * p.p_fa_asv;
    let c2 = p.c_fa_cm * p.p_spoof * (1.0 - p.p_miss_spoof_asv);
    let mut thresholds = brute_thresholds(k);
    thresholds.push(f64::NEG_INFINITY);
    thresholds
        .iter()
        .map(|&t| {
            let (m, f) = rates_at(k, t);
            (c1 * m + c2 * f) / c1.min(c2)
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn eer_and_tdcf_match_exhaustive_sweep() {
    let start = std::time::Instant::now();
    let params = TdcfParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2019);
    for trial in 0..100 {
        let k = random_set(&mut rng, 200, trial % 2 == 1);
        let (e, _) = eer(&k);
        let (t, _) = min_tdcf(&k, &params).unwrap();
        assert!((e - brute_eer(&k)).abs() <= 1e-12, "trial {trial}: eer {e} vs {}", brute_eer(&k));
        assert!((t - brute_tdcf(&k, &params)).abs() <= 1e-12, "trial {trial}: tdcf {t}");
    }
    assert!(start.elapsed().as_secs() < 30);
}

#[test]
fn rate_curve_matches_direct_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k = random_set(&mut rng, 50, true);
    let (t, m, f) = rate_curve(&k);
    assert_eq!(t, brute_thresholds(&k));
    for i in 0..t.len() {
        assert_eq!((m[i], f[i]), rates_at(&k, t[i]));
    }
}

#[test]
fn boundary_systems() {
    let p = TdcfParams::default();
    let perfect = KeyedScores::new(vec![0.9, 0.8], vec![0.2, 0.1]).unwrap();
    assert_eq!(eer(&perfect).0, 0.0);
    assert_eq!(min_tdcf(&perfect, &p).unwrap().0, 0.0);

    let inverted = KeyedScores::new(vec![0.1, 0.2], vec![0.8, 0.9]).unwrap();
    assert_eq!(eer(&inverted).0, 1.0);
    assert_eq!(min_tdcf(&inverted, &p).unwrap().0, 1.0);

    let constant = KeyedScores::new(vec![0.5; 3], vec![0.5; 5]).unwrap();
    assert_eq!(min_tdcf(&constant, &p).unwrap().0, 1.0);
    assert_eq!(eer(&constant).0, 0.5);

    let mixed = KeyedScores::new(vec![0.7, 0.3], vec![0.5, 0.1]).unwrap();
    assert_eq!(eer(&mixed).0, 0.5);
}

#[test]
fn non_positive_coefficients_are_rejected() {
    let k = KeyedScores::new(vec![1.0], vec![0.0]).unwrap();
    let p = TdcfParams { p_miss_spoof_asv: 1.0, ..TdcfParams::default() };
    assert!(min_tdcf(&k, &p).is_err());
    let p = TdcfParams { p_tar: 0.5, ..TdcfParams::default() };
    assert!(min_tdcf(&k, &p).is_err());
}

#[test]
fn report_line_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let k = random_set(&mut rng, 80, false);
    let r = MetricReport::compute(&k, &TdcfParams::default()).unwrap();
    assert_eq!(MetricReport::parse_line(&r.to_line()).unwrap(), r);
}

fn keyed_strategy() -> impl Strategy<Value = KeyedScores> {
    (
        prop::collection::vec(-50.0f64..50.0, 1..40),
        prop::collection::vec(-50.0f64..50.0, 1..40),
    )
        .prop_map(|(b, s)| KeyedScores::new(b, s).unwrap())
}

proptest! {
    #[test]
    fn eer_is_invariant_to_increasing_transforms(k in keyed_strategy(), a in 0.01f64..10.0, b in -5.0f64..5.0) {
        let (e, _) = eer(&k);
        let map = |f: &dyn Fn(f64) -> f64| {
            KeyedScores::new(k.bonafide.iter().map(|&x| f(x)).collect(), k.spoof.iter().map(|&x| f(x)).collect()).unwrap()
        };
        let affine = map(&|x| a * x + b);
        prop_assert!((eer(&affine).0 - e).abs() < 1e-12);
        // keep tanh away from saturation so the order stays strict
        let squashed = map(&|x| (x / 60.0).tanh());
        prop_assert!((eer(&squashed).0 - e).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_bounded(k in keyed_strategy()) {
        let p = TdcfParams::default();
        let (e, _) = eer(&k);
        let (t, _) = min_tdcf(&k, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!((0.0..=1.0).contains(&t));
    }

    #[test]
    fn no_threshold_beats_the_minimum(k in keyed_strategy(), theta in -60.0f64..60.0) {
        let p = TdcfParams::default();
        let (t, _) = min_tdcf(&k, &p).unwrap();
        let (m, f) = rates_at(&k, theta);
        prop_assert!(p.normalized_cost(m, f).unwrap() >= t - 1e-15);
    }
}
