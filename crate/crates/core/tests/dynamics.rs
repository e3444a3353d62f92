use nalgebra::DMatrix;
use odi_core::dynamics::{
    canonical_dynkin_cases, compose_drift, dynkin_check, estimate_lipschitz_w, generator_a, log_generator, match_spec,
    on_field, quantum_operator, simulate_paths, AffineSde, Boundary, DriftParams, DynamicsError, DynkinSetup, FnField,
    MatchDynamics, NoObserver, SimulationSpec, TestFunction,
};
use odi_core::model::MatchConfig;
use odi_core::montecarlo::Executor;
use odi_core::stats::Moments;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spec(end: f64, step: f64, n_paths: usize, seed: u64) -> SimulationSpec {
    SimulationSpec { start: 0.0, end, max_step: step, n_paths, seed, boundary: Boundary::Free, record: 0 }
}

#[test]
fn generator_reference_values() {
    let z = [0.3, -1.2, 2.0];
    let sigma = DMatrix::from_row_slice(3, 2, &[0.4, 0.1, -0.7, 2.0, 1.5, 0.0]);
    let c = TestFunction::Constant { c: 4.0 };
    assert_eq!(generator_a(&c, &z, &[1.0, 2.0, 3.0], &sigma).unwrap(), 0.0);

    let q = TestFunction::Quadratic { offset: 0.0 };
    let eye = DMatrix::identity(3, 3);
    assert!((generator_a(&q, &z, &[0.0; 3], &eye).unwrap() - 3.0).abs() < 1e-14);

    let first = TestFunction::Linear { intercept: 0.0, coeffs: vec![1.0, 0.0, 0.0] };
    assert!((generator_a(&first, &z, &[3.0, -8.0, 5.0], &sigma).unwrap() - 3.0).abs() < 1e-14);
}

#[test]
fn log_generator_reference_values() {
    assert_eq!(log_generator(0.0, 2.0).unwrap(), 0.0);
    assert!((log_generator(std::f64::consts::E - 1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
    let h = TestFunction::Quadratic { offset: 1.0 };
    let v = quantum_operator(&h, &[1.0], &[1.0], &DMatrix::from_element(1, 1, 1.0)).unwrap();
    assert!((v - 2.5f64.ln()).abs() < 1e-12);
    assert!((v - 0.916_291).abs() < 1e-6);
    assert!(matches!(log_generator(1.0, 0.0), Err(DynamicsError::ZeroTestFunction)));
    assert!(matches!(log_generator(-3.0, 2.0), Err(DynamicsError::LogDomain { .. })));
}

#[test]
fn finite_difference_field_matches_analytic() {
    let analytic = TestFunction::GaussianBump { offset: 0.5, width: 1.3 };
    let numeric = FnField(|z: &[f64]| 0.5 + (-z.iter().map(|x| x * x).sum::<f64>() / (2.0 * 1.3 * 1.3)).exp());
    let z = [0.4, -0.9];
    let mu = [0.3, 1.1];
    let sigma = DMatrix::from_row_slice(2, 2, &[0.8, 0.0, 0.2, 0.5]);
    let a = generator_a(&analytic, &z, &mu, &sigma).unwrap();
    let n = generator_a(&numeric, &z, &mu, &sigma).unwrap();
    assert!((a - n).abs() < 1e-6, "{a} vs {n}");
}

#[test]
fn drift_composition_cases() {
    let zero = DriftParams { offset: 0.0, valuation_coupling: 0.0, meanfield_coupling: 0.0, ..DriftParams::default() };
    let d = compose_drift(&[1.0, 2.0], &[3.0, 4.0], &[0.0, 0.0], &[1.0, 1.0], &zero).unwrap();
    assert_eq!(d, vec![0.0, 0.0]);

    let constant = DriftParams { offset: 0.7, ..zero.clone() };
    assert_eq!(compose_drift(&[1.0], &[3.0], &[0.0], &[1.0], &constant).unwrap(), vec![0.7]);

    let mf = DriftParams { meanfield_coupling: 0.01, ..zero.clone() };
    let d = compose_drift(&[0.0; 2], &[100.0; 2], &[100.0; 2], &[0.0; 2], &mf).unwrap();
    assert!(d.iter().all(|v| (v - 1.0).abs() < 1e-15));

    // 𝒜h of h = 1 + z² with μ̃ = 0.5, σ = 1 at z = 1: ln(1 + (2·0.5 + 1)/2)
    let quad = DriftParams { offset: 0.5, test_function: TestFunction::Quadratic { offset: 1.0 }, ..zero };
    let d = compose_drift(&[0.0], &[1.0], &[0.0], &[1.0], &quad).unwrap();
    assert!((d[0] - (0.5 + 2f64.ln())).abs() < 1e-12);
}

#[test]
fn still_and_constant_dynamics_are_exact() {
    let ex = Executor::sequential();
    let still = AffineSde::constant(vec![0.0; 3], vec![0.0; 3]);
    let ens = simulate_paths(&still, &[0.0; 3], &spec(50.0, 1.0 / 6.0, 64, 1), &NoObserver, &ex).unwrap();
    assert!(ens.terminal.iter().flatten().all(|v| *v == 0.0));

    let c = 0.37;
    let drifted = AffineSde::constant(vec![c; 2], vec![0.0; 2]);
    let s = SimulationSpec { record: 2, ..spec(6.0, 1.0 / 6.0, 4, 1) };
    let ens = simulate_paths(&drifted, &[0.0; 2], &s, &NoObserver, &ex).unwrap();
    for p in &ens.recorded {
        for (u, z) in ens.grid.iter().zip(&p.values) {
            assert!(z.iter().all(|v| (v - c * u).abs() < 1e-12));
        }
    }
}

#[test]
fn constant_diffusion_variance() {
    let s0 = 0.8;
    let horizon = 3.0;
    let model = AffineSde::constant(vec![0.0], vec![s0]);
    let ens =
        simulate_paths(&model, &[0.0], &spec(horizon, 0.25, 40_000, 5), &NoObserver, &Executor::default()).unwrap();
    let v = Moments::of(&ens.terminal_component(0)).variance_estimate();
    assert!(v.within(s0 * s0 * horizon, 4.0), "{v:?}");
}

#[test]
fn floor_boundary_keeps_runs_non_negative() {
    let model = AffineSde::constant(vec![-0.5, 0.0], vec![1.0, 2.0]);
    let s = SimulationSpec { boundary: Boundary::Floor, record: 16, ..spec(10.0, 1.0 / 6.0, 200, 9) };
    let ens = simulate_paths(&model, &[0.0, 0.0], &s, &NoObserver, &Executor::default()).unwrap();
    assert!(ens.terminal.iter().flatten().all(|v| *v >= 0.0));
    assert!(ens.recorded.iter().flat_map(|p| p.values.iter().flatten()).all(|v| *v >= 0.0));
}

#[test]
fn results_independent_of_executor() {
    let model = AffineSde { intercept: vec![0.2, 0.1], slope: vec![-0.3, 0.05], sigma: vec![0.7, 1.1] };
    let s = SimulationSpec { record: 3, ..spec(5.0, 1.0 / 12.0, 500, 77) };
    let a = simulate_paths(&model, &[1.0, 0.0], &s, &NoObserver, &Executor::sequential()).unwrap();
    for w in [2, 4, 16] {
        let b = simulate_paths(&model, &[1.0, 0.0], &s, &NoObserver, &Executor::with_workers(Some(w))).unwrap();
        assert_eq!(a, b, "workers = {w}");
    }
}

#[test]
fn match_dynamics_default_run() {
    let config = MatchConfig::default();
    let dynamics = MatchDynamics::new(&config).unwrap();
    let s = match_spec(&config, 50, 3).unwrap();
    let ens = simulate_paths(&dynamics, &[0.0; 11], &s, &NoObserver, &Executor::default()).unwrap();
    let totals = ens.terminal_totals();
    assert!(totals.iter().all(|t| t.is_finite() && *t > 0.0));
    assert!(dynamics.sigma2_star() >= 1.0);
}

#[test]
fn wicket_schedule_changes_batsmen() {
    let schedule = [5.0, 10.0];
    assert_eq!(on_field(0.0, &schedule, 4), vec![true, true, false, false]);
    assert_eq!(on_field(5.0, &schedule, 4), vec![false, true, true, false]);
    assert_eq!(on_field(12.0, &schedule, 4), vec![false, false, true, true]);
}

#[test]
fn canonical_dynkin_triples_hold() {
    let ex = Executor::default();
    for (k, case) in canonical_dynkin_cases().into_iter().enumerate() {
        let setup = DynkinSetup {
            start: case.interval.0,
            end: case.interval.1,
            step: 1.0 / 48.0,
            n_paths: 20_000,
            seed: 400 + k as u64,
        };
        let r = dynkin_check(case.name, &case.h, &case.model, &case.z_nu, &setup, case.integrand, &ex).unwrap();
        assert!(r.passed, "{}: defect {:?}", case.name, r.defect);
        assert!(r.martingale_passed, "{}: martingale {:?}", case.name, r.martingale);
    }
}

#[test]
fn dynkin_without_evolution_is_exact() {
    let still = AffineSde::constant(vec![0.0], vec![0.0]);
    let h = TestFunction::Quadratic { offset: 1.0 };
    let setup = DynkinSetup { start: 1.0, end: 2.0, step: 0.1, n_paths: 10, seed: 0 };
    let r = dynkin_check(
        "still",
        &h,
        &still,
        &[0.5],
        &setup,
        odi_core::dynamics::BoundedIntegrand::Tanh,
        &Executor::sequential(),
    )
    .unwrap();
    assert_eq!(r.lhs.value, 1.25);
    assert_eq!(r.rhs.value, 1.25);
    let w = r.weighted.unwrap();
    // 𝔼[ν̃²h] = 4·1.25 against ν²h = 1.25 with a zero integral
    assert!((w.lhs - 5f64.ln()).abs() < 1e-12);
    assert!((w.rhs - 1.25f64.ln()).abs() < 1e-12);
}

#[test]
fn lipschitz_estimate_respects_constant() {
    let d = DriftParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let k = estimate_lipschitz_w(&d, 11, 2000, &mut rng);
    assert!(k <= d.lipschitz_w);
    assert!((k - d.valuation_coupling.abs()).abs() < 1e-9);
}

#[test]
fn zero_paths_rejected() {
    let model = AffineSde::constant(vec![0.0], vec![1.0]);
    assert!(simulate_paths(&model, &[0.0], &spec(1.0, 0.1, 0, 0), &NoObserver, &Executor::sequential()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn paths_depend_only_on_seed_and_index(seed in any::<u64>(), n in 2usize..20, extra in 1usize..20) {
        let model = AffineSde { intercept: vec![0.1, 0.0], slope: vec![0.0, -0.2], sigma: vec![0.5, 1.0] };
        let small = SimulationSpec { record: n, ..spec(2.0, 1.0 / 6.0, n, seed) };
        let large = SimulationSpec { record: n + extra, ..spec(2.0, 1.0 / 6.0, n + extra, seed) };
        let ex = Executor::sequential();
        let a = simulate_paths(&model, &[0.0, 1.0], &small, &NoObserver, &ex).unwrap();
        let b = simulate_paths(&model, &[0.0, 1.0], &small, &NoObserver, &ex).unwrap();
        let c = simulate_paths(&model, &[0.0, 1.0], &large, &NoObserver, &ex).unwrap();
        prop_assert_eq!(&a, &b);
        for i in 0..n {
            prop_assert_eq!(&a.recorded[i], &c.recorded[i]);
            prop_assert_eq!(a.terminal[i].iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                c.terminal[i].iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn run_trap_iff_log_generator_vanishes(
        c in prop::collection::vec(-5i32..=5, 2..5),
        z in prop::collection::vec(-3.0f64..3.0, 5),
        intercept in 50.0f64..100.0,
        trap in any::<bool>(),
        mu_raw in prop::collection::vec(-5i32..=5, 5),
    ) {
        let n = c.len();
        let coeffs: Vec<f64> = c.iter().map(|&v| v as f64).collect();
        // a rotated copy of the gradient is orthogonal to it: μ = (c₂, −c₁, 0, …)
        let mu: Vec<f64> = if trap {
            (0..n).map(|i| match i { 0 => coeffs[1], 1 => -coeffs[0], _ => 0.0 }).collect()
        } else {
            mu_raw[..n].iter().map(|&v| v as f64).collect()
        };
        let h = TestFunction::Linear { intercept, coeffs };
        let sigma = DMatrix::identity(n, n);
        let zz = &z[..n];
        let a = generator_a(&h, zz, &mu, &sigma).unwrap();
        let q = quantum_operator(&h, zz, &mu, &sigma).unwrap();
        prop_assert_eq!(a == 0.0, q == 0.0);
        if trap {
            prop_assert_eq!(q, 0.0);
        }
    }

    #[test]
    fn accepted_drift_respects_growth_bound(
        w in prop::collection::vec(0.0f64..20.0, 1..12),
        z_scale in 0.0f64..200.0,
        offset in -5.0f64..5.0,
        coupling in -0.1f64..0.1,
        growth in 0.01f64..2.0,
    ) {
        let d = DriftParams { offset, valuation_coupling: coupling, growth, ..DriftParams::default() };
        let z: Vec<f64> = w.iter().map(|x| x * z_scale / 20.0).collect();
        let mean = vec![0.0; w.len()];
        let sigma = vec![1.0; w.len()];
        let mu_tilde = d.mu_tilde(&w, &mean);
        let norm = mu_tilde.iter().map(|x| x * x).sum::<f64>().sqrt();
        match compose_drift(&w, &z, &mean, &sigma, &d) {
            Ok(_) => prop_assert!(norm <= d.growth_bound(&w, &z, &mean)),
            Err(DynamicsError::GrowthBound { magnitude, bound }) => prop_assert!(magnitude > bound),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }
}
