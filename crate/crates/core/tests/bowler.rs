use odi_core::bowler::{
    characteristic_fn, eta_of_payoff, expected_payoff_mixture, loewner_step, perimeter_and_sides, sigma2_star,
    snowflake_area, snowflake_area_recursive, BowlerError, CharacteristicFunction, EtaCoefficients,
    LoewnerCoefficients, SNOWFLAKE_INCREMENT,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Integrates dα/du = cα, dβ/du = −½θ²v²α² backwards from α(U) = 1, β(U) = 0 with
/// classical RK4; returns (α(0), β(0)).
fn rk4_terminal(c: f64, v: f64, theta: f64, horizon: f64, steps: usize) -> (f64, f64) {
    let f = |a: f64| (c * a, -0.5 * theta * theta * v * v * a * a);
    let h = -horizon / steps as f64;
    let (mut a, mut b) = (1.0, 0.0);
    for _ in 0..steps {
        let k1 = f(a);
        let k2 = f(a + 0.5 * h * k1.0);
        let k3 = f(a + 0.5 * h * k2.0);
        let k4 = f(a + h * k3.0);
        a += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        b += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    (a, b)
}

fn coeffs(kappa: f64, lg: f64, g_hat: f64, horizon: f64) -> LoewnerCoefficients {
    LoewnerCoefficients { kappa, lg, g_hat, horizon }
}

#[test]
fn shape_at_integer_iterations() {
    let s0 = perimeter_and_sides(0.0);
    assert_eq!((s0.sides, s0.side_length, s0.perimeter), (3.0, 1.0, 3.0));
    let s1 = perimeter_and_sides(1.0);
    assert_eq!(s1.sides, 12.0);
    assert!((s1.side_length - 1.0 / 3.0).abs() < 1e-16);
    assert!((s1.perimeter - 4.0).abs() < 1e-15);
    let s2 = perimeter_and_sides(2.0);
    assert_eq!(s2.sides, 48.0);
    assert!((s2.side_length - 1.0 / 9.0).abs() < 1e-16);
    assert!((s2.perimeter - 16.0 / 3.0).abs() < 1e-14);
}

#[test]
fn area_reference_points() {
    assert_eq!(snowflake_area(0.0, 2.5), 2.5);
    assert!((snowflake_area(1.0, 1.0) - 4.0 / 3.0).abs() < 1e-15);
    assert!((snowflake_area(60.0, 7.0) - 8.0 * 7.0 / 5.0).abs() < 1e-10);
    // the constant 1/3 drifts away from the closed form after one step
    assert!((snowflake_area_recursive(1, 1.0, 1.0 / 3.0) - snowflake_area(1.0, 1.0)).abs() > 0.1);
}

#[test]
fn area_recursion_agrees_with_closed_form() {
    for delta in [1.0, 2.5, 7.0] {
        for eta in 0..=30u32 {
            let closed = snowflake_area(eta as f64, delta);
            let rec = snowflake_area_recursive(eta, delta, SNOWFLAKE_INCREMENT);
            assert!((closed - rec).abs() < 1e-12, "eta {eta}, delta {delta}: {closed} vs {rec}");
        }
    }
}

#[test]
fn perimeter_is_sides_times_length() {
    for eta in 0..=20 {
        let s = perimeter_and_sides(eta as f64);
        assert_eq!(s.perimeter, s.sides * s.side_length);
        let closed = 3.0 * (4.0f64 / 3.0).powi(eta);
        assert!((s.perimeter - closed).abs() <= 1e-13 * closed);
    }
}

#[test]
fn eta_reference_values() {
    let c = EtaCoefficients { c1: 1.0, c2: 1.0 };
    assert_eq!(eta_of_payoff(0.0, c), 0.0);
    assert!((eta_of_payoff(1.0, c) - (std::f64::consts::E - 1.0)).abs() < 1e-15);
    assert!(eta_of_payoff(1.0, c) < eta_of_payoff(2.0, c));
}

#[test]
fn mixture_reference_values() {
    assert_eq!(expected_payoff_mixture([1.0, 0.0, 0.0], [5.0, 9.0, 11.0]), 5.0);
    assert!((expected_payoff_mixture([0.2, 0.3, 0.5], [4.0; 3]) - 4.0).abs() < 1e-15);
    assert!((expected_payoff_mixture([0.5, 0.3, 0.2], [10.0, 20.0, 30.0]) - 17.0).abs() < 1e-14);
}

#[test]
fn characteristic_function_reference_case() {
    let c = coeffs(1.0, 1.0, 1.0, 1.0);
    let r = characteristic_fn(1.0, &c, 1.0).unwrap();
    assert!((r.alpha0 - (-4.0f64).exp()).abs() < 1e-16);
    let beta0 = (1.0 - (-8.0f64).exp()) / 16.0;
    assert!((r.beta0 - beta0).abs() < 1e-16);
    assert!((r.sigma2_star - 1.064_472_140_520_042_6).abs() < 1e-12);
    let (a, b) = rk4_terminal(4.0, 1.0, 1.0, 1.0, 20_000);
    assert!((a - r.alpha0).abs() <= 1e-8 * r.alpha0);
    assert!((b - r.beta0).abs() <= 1e-8 * r.beta0);
    let cf = CharacteristicFunction::new(&c, 1.0).unwrap();
    assert_eq!(cf.alpha(1.0), 1.0);
    assert_eq!(cf.beta(1.0, 1.0), 0.0);
}

#[test]
fn phi_at_zero_is_one() {
    let r = characteristic_fn(0.0, &coeffs(0.7, 0.4, 1.3, 50.0), 1.2).unwrap();
    assert_eq!(r.phi.re, 1.0);
    assert_eq!(r.phi.im, 0.0);
    assert_eq!(sigma2_star(0.0, &coeffs(0.7, 0.4, 1.3, 50.0), 1.2).unwrap(), 1.0);
}

#[test]
fn zero_generator_term_gives_pure_decay() {
    let r = characteristic_fn(1.0, &coeffs(1.0, 0.0, 1.0, 3.0), 1.4).unwrap();
    assert!((r.alpha0 - (-3.0f64).exp()).abs() < 1e-16);
    assert_eq!(r.sigma2_star, 1.0);
}

#[test]
fn vanishing_denominators_rejected() {
    assert!(matches!(
        characteristic_fn(1.0, &coeffs(1.0, 1.0, 0.0, 1.0), 1.0),
        Err(BowlerError::ZeroDenominator { .. })
    ));
    // √(κΥ)𝓛g̃ + ĝ = 1·1 − 1 = 0
    assert!(matches!(
        characteristic_fn(1.0, &coeffs(1.0, 1.0, -1.0, 1.0), 1.0),
        Err(BowlerError::ZeroDenominator { .. })
    ));
}

#[test]
fn loewner_without_diffusivity_decays_exponentially() {
    let du = 1e-4;
    let mut g = 1.0;
    for k in 1..=100 {
        let s = loewner_step(g, 0.3, 0.0, 1.0, du).unwrap();
        assert_eq!(s.halvings, 0);
        g = s.g;
        assert!((g - (-(k as f64) * du).exp()).abs() < 1e-6);
    }
    let fixed = loewner_step(0.0, 2.0, 1.0, 1.0, 0.1).unwrap();
    assert_eq!(fixed.g, 0.0);
}

#[test]
fn loewner_guard_near_pole() {
    // a = √(κΥ)𝔚 = 1; g sits just below the pole and the step toward it must shrink
    let near = loewner_step(1.0 - 1e-9, 1.0, 1.0, 1.0, 0.1);
    assert!(matches!(near, Err(BowlerError::Singular { .. })));
    let close = loewner_step(0.9, 1.0, 1.0, 1.0, 0.5).unwrap();
    assert!(close.halvings > 0);
    assert!(close.g < 1.0);
}

#[test]
fn sigma2_star_at_least_one_over_random_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let c = coeffs(
            rng.random_range(0.0..2.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.3..3.0),
            rng.random_range(0.5..50.0),
        );
        let area = rng.random_range(0.5..2.0);
        let theta = rng.random_range(-3.0..3.0);
        match sigma2_star(theta, &c, area) {
            Ok(s) => assert!(s >= 1.0, "{s}"),
            Err(BowlerError::ZeroDenominator { .. }) => {}
            Err(e) => panic!("{e}"),
        }
    }
}

fn loewner_coeffs() -> impl Strategy<Value = (LoewnerCoefficients, f64)> {
    (0.1f64..1.0, 0.05f64..0.5, 0.5f64..2.0, 0.5f64..5.0, 1.0f64..1.6)
        .prop_map(|(kappa, lg, g_hat, horizon, area)| (coeffs(kappa, lg, g_hat, horizon), area))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn alpha_solves_its_ode((c, area) in loewner_coeffs()) {
        let cf = CharacteristicFunction::new(&c, area).unwrap();
        prop_assert_eq!(cf.alpha(c.horizon), 1.0);
        let h = 1e-6 * c.horizon;
        for k in 1..100 {
            let u = c.horizon * k as f64 / 100.0;
            let fd = (cf.alpha(u + h) - cf.alpha(u - h)) / (2.0 * h);
            let rhs = cf.rate() * cf.alpha(u);
            prop_assert!((fd - rhs).abs() <= 1e-6 * (1.0 + rhs.abs()), "u {}: {} vs {}", u, fd, rhs);
        }
    }

    #[test]
    fn closed_form_matches_rk4((c, area) in loewner_coeffs(), theta in -2.0f64..2.0) {
        let r = characteristic_fn(theta, &c, area).unwrap();
        let ku = c.kappa * area;
        let rate = ((ku.sqrt() * c.lg + c.g_hat) / c.g_hat).powi(2);
        let vol = ku * c.lg / c.g_hat;
        let (a, b) = rk4_terminal(rate, vol, theta, c.horizon, 20_000);
        prop_assert!((a - r.alpha0).abs() <= 1e-8 * r.alpha0.abs());
        prop_assert!((b - r.beta0).abs() <= 1e-8 * r.beta0.abs() + 1e-300);
    }

    #[test]
    fn modulus_squared_is_exp_two_beta((c, area) in loewner_coeffs(), theta in -5.0f64..5.0) {
        let r = characteristic_fn(theta, &c, area).unwrap();
        let prod = r.phi * r.phi.conj();
        let target = (2.0 * r.beta0).exp();
        prop_assert!((prod.re - target).abs() <= 1e-12 * target);
        prop_assert!(prod.im.abs() <= 1e-12 * target);
        prop_assert!((prod.re.sqrt() - r.sigma2_star).abs() <= 1e-12 * r.sigma2_star);
        let mirrored = characteristic_fn(-theta, &c, area).unwrap();
        prop_assert!((r.phi.norm() - mirrored.phi.norm()).abs() <= 1e-14 * r.phi.norm());
    }

    #[test]
    fn area_bounded_and_increasing(eta in 0.0f64..40.0, step in 0.01f64..5.0, delta in 0.1f64..10.0) {
        let a = snowflake_area(eta, delta);
        prop_assert!(a >= delta && a < 1.6 * delta);
        let next = snowflake_area(eta + step, delta);
        prop_assert!(next >= a);
        // Past η ≈ 20 the increment drops below one ulp of the area.
        if eta < 20.0 {
            prop_assert!(next > a);
        }
    }

    #[test]
    fn eta_increasing_and_convex(a in 0.0f64..5.0, h in 0.01f64..1.0, c1 in 0.1f64..3.0, c2 in 0.1f64..2.0) {
        let c = EtaCoefficients { c1, c2 };
        let (lo, mid, hi) = (eta_of_payoff(a, c), eta_of_payoff(a + h, c), eta_of_payoff(a + 2.0 * h, c));
        prop_assert!(lo >= 0.0);
        prop_assert!(mid > lo);
        prop_assert!(hi - mid > mid - lo);
    }

    #[test]
    fn equal_payoffs_give_that_payoff(p in prop::array::uniform3(0.0f64..1.0), v in -50.0f64..50.0) {
        let s: f64 = p.iter().sum();
        prop_assume!(s > 1e-3);
        let w = [p[0] / s, p[1] / s, p[2] / s];
        prop_assert!((expected_payoff_mixture(w, [v; 3]) - v).abs() <= 1e-12 * (1.0 + v.abs()));
    }
}
