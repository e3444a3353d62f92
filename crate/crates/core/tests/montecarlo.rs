use odi_core::montecarlo::{
    derive_seed, path_rng, run_ensemble, run_ensemble_with, summarize, EnsembleSpec, Executor, Statistic,
};
use odi_core::stats::{compensated_sum, Moments};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::HashSet;

#[test]
fn seeds_are_deterministic_and_distinct() {
    assert_eq!(derive_seed(42, 7), derive_seed(42, 7));
    let seen: HashSet<u64> = (0..1_000_000).map(|i| derive_seed(42, i)).collect();
    assert_eq!(seen.len(), 1_000_000);
    let bases: HashSet<u64> = (0..1000).map(|b| derive_seed(b, 0)).collect();
    assert_eq!(bases.len(), 1000);
}

#[test]
fn normal_mean_within_three_se() {
    let n = 100_000;
    let spec = EnsembleSpec::new(n, 11);
    let r = run_ensemble(&spec, |_, rng| Ok(vec![rng.sample::<f64, _>(StandardNormal)])).unwrap();
    let m = r.mean(0);
    assert!(m.value.abs() <= 3.0 / (n as f64).sqrt(), "{m:?}");
    let v = r.observables[0].variance.unwrap();
    assert!(v.within(1.0, 4.0), "{v:?}");
    let bm = r.observables[0].batch_means_se.unwrap();
    assert!((bm / m.se.unwrap() - 1.0).abs() < 0.5);
}

#[test]
fn constant_task_has_zero_se() {
    let r = run_ensemble(&EnsembleSpec::new(500, 3), |_, _| Ok(vec![2.5, -1.0])).unwrap();
    assert_eq!(r.mean(0).value, 2.5);
    assert_eq!(r.mean(0).se, Some(0.0));
    assert_eq!(r.mean(1).value, -1.0);
}

#[test]
fn single_path_has_undefined_se() {
    let r = run_ensemble(&EnsembleSpec::new(1, 3), |_, rng| Ok(vec![rng.random::<f64>()])).unwrap();
    assert_eq!(r.mean(0).se, None);
    assert!(r.mean(0).z_score(0.0).is_none());
}

#[test]
fn zero_paths_rejected() {
    assert!(run_ensemble(&EnsembleSpec::new(0, 3), |_, _| Ok(vec![0.0])).is_err());
}

#[test]
fn ragged_observables_rejected() {
    let r = run_ensemble(&EnsembleSpec::new(10, 3), |i, _| Ok(vec![0.0; 1 + (i == 4) as usize]));
    assert!(r.is_err());
}

#[test]
fn report_independent_of_worker_count() {
    let spec = EnsembleSpec::new(20_000, 2024).with_statistics(vec![
        Statistic::Mean,
        Statistic::Variance,
        Statistic::Quantile(0.9),
    ]);
    let task = |i: usize, rng: &mut odi_core::montecarlo::PathRng| {
        let x: f64 = rng.sample(StandardNormal);
        Ok(vec![x, x * x + i as f64 * 1e-6])
    };
    let base = run_ensemble_with(&Executor::sequential(), &spec, task).unwrap();
    let base_json = serde_json::to_string(&base).unwrap();
    for workers in [1, 4, 16] {
        let r = run_ensemble(&spec.clone().with_workers(Some(workers)), task).unwrap();
        assert_eq!(serde_json::to_string(&r).unwrap(), base_json, "workers = {workers}");
    }
}

#[test]
fn executor_returns_index_order() {
    for ex in [Executor::sequential(), Executor::with_workers(Some(8)), Executor::default()] {
        assert_eq!(ex.map(1000, |i| i * i), (0..1000).map(|i| i * i).collect::<Vec<_>>());
    }
}

#[test]
fn summarize_matches_direct_moments() {
    let rows: Vec<Vec<f64>> = (0..1000).map(|i| vec![(i as f64 * 0.37).sin()]).collect();
    let col: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let r = summarize(&rows, &EnsembleSpec::new(rows.len(), 0));
    let m = Moments::of(&col);
    assert!((r.mean(0).value - compensated_sum(col.iter().copied()) / 1000.0).abs() < 1e-15);
    assert!((r.observables[0].variance.unwrap().value - m.variance_estimate().value).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn path_stream_depends_only_on_seed_and_index(seed in any::<u64>(), i in 0u64..1_000_000) {
        let a: Vec<u64> = (0..8).map({ let mut r = path_rng(seed, i); move |_| r.random() }).collect();
        let b: Vec<u64> = (0..8).map({ let mut r = path_rng(seed, i); move |_| r.random() }).collect();
        prop_assert_eq!(&a, &b);
        let c: Vec<u64> = (0..8).map({ let mut r = path_rng(seed, i + 1); move |_| r.random() }).collect();
        prop_assert_ne!(a, c);
    }

    #[test]
    fn neighbouring_indices_get_distinct_seeds(seed in any::<u64>(), i in any::<u64>()) {
        prop_assert_ne!(derive_seed(seed, i), derive_seed(seed, i.wrapping_add(1)));
    }
}
