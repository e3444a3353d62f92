use odi_core::model::{
    discounted_score, load_config, save_config, team_discounted_total, ConfigError, MatchConfig, PlayerProfile, Role,
};
use proptest::prelude::*;

fn profile(index: usize, rho: f64, past_scores: Vec<f64>) -> PlayerProfile {
    PlayerProfile { index, rho, past_scores, valuation: 1.0, role: Role::Batsman }
}

/// Σ e^{-ρm} Z_m accumulated smallest term first in extended form via exp_m1, as an
/// independent evaluation path.
fn reference_score(rho: f64, scores: &[f64]) -> f64 {
    let mut terms: Vec<f64> =
        scores.iter().enumerate().map(|(k, z)| z * (1.0 + (-rho * (k + 1) as f64).exp_m1())).collect();
    terms.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    terms.iter().sum()
}

#[test]
fn single_match_score() {
    let mut z = vec![0.0; 10];
    z[0] = 50.0;
    let p = profile(1, 0.5, z.clone());
    let v = discounted_score(&p);
    assert!((v - 30.326_532_985_631_67).abs() < 1e-10, "{v}");
    assert!((v - reference_score(0.5, &z)).abs() < 1e-12);
}

#[test]
fn team_total_with_one_scorer() {
    let mut players: Vec<_> = (1..=11).map(|i| profile(i, 0.1 * i as f64 - 0.05, vec![0.0; 10])).collect();
    let t = team_discounted_total(&players);
    assert_eq!(t.value, 0.0);
    assert!(t.degenerate);
    players[0].rho = 0.5;
    players[0].past_scores[0] = 50.0;
    let t = team_discounted_total(&players);
    assert!(!t.degenerate);
    assert!((t.value - 30.326_532_985_631_67).abs() < 1e-10);
}

#[test]
fn vanishing_discount_counts_matches() {
    let p = profile(1, 1e-9, vec![1.0; 10]);
    assert!((discounted_score(&p) - 10.0).abs() < 1e-6);
}

#[test]
fn minimal_config_file_takes_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("minimal.json");
    std::fs::write(&path, "{}").unwrap();
    let c = load_config(&path).unwrap();
    assert_eq!(c.total_overs, 50.0);
    assert_eq!(c.n_players(), 11);
    assert!(c.players.iter().all(|p| p.past_scores.len() == 10));
}

#[test]
fn mixture_not_summing_to_one_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"bowler": {"mixture": [0.5, 0.2, 0.2]}}"#).unwrap();
    match load_config(&path) {
        Err(ConfigError::Invalid { field, value, .. }) => {
            assert!(field.contains("mixture"), "{field}");
            assert!((value - 0.9).abs() < 1e-12);
        }
        other => panic!("expected invalid mixture, got {other:?}"),
    }
}

#[test]
fn weather_base_below_one_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"environment": {"weather": {"lambda1": 0.25, "lambda2": 0.25}}}"#).unwrap();
    let err = load_config(&path).unwrap_err();
    assert!(err.to_string().contains("weather exponent base must exceed 1"), "{err}");
}

#[test]
fn unparsable_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{ players: ").unwrap();
    assert!(matches!(load_config(&path), Err(ConfigError::Parse { .. })));
    assert!(matches!(load_config(&dir.path().join("absent.json")), Err(ConfigError::Io { .. })));
}

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..200.0, 10)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn weights_strictly_decrease(rho in 1e-6f64..=1.0, m in 1u32..60) {
        let w = |m: u32| (-rho * m as f64).exp();
        prop_assert!(w(m) > w(m + 1));
    }

    #[test]
    fn first_match_outweighs_tenth(rho in 1e-6f64..=1.0, z in 0.1f64..100.0) {
        let mut a = vec![0.0; 10];
        let mut b = vec![0.0; 10];
        a[0] = z;
        b[9] = z;
        prop_assert!(discounted_score(&profile(1, rho, a)) > discounted_score(&profile(1, rho, b)));
    }

    #[test]
    fn score_matches_reference(rho in 1e-6f64..=1.0, z in scores()) {
        let v = discounted_score(&profile(1, rho, z.clone()));
        prop_assert!((v - reference_score(rho, &z)).abs() <= 1e-12 * (1.0 + v));
    }

    #[test]
    fn team_total_is_linear(
        rows in prop::collection::vec((1e-3f64..=1.0, scores()), 1..12),
        c in 0.0f64..10.0,
    ) {
        let players: Vec<_> = rows.iter().enumerate().map(|(i, (r, z))| profile(i + 1, *r, z.clone())).collect();
        let scaled: Vec<_> = players
            .iter()
            .map(|p| PlayerProfile { past_scores: p.past_scores.iter().map(|z| c * z).collect(), ..p.clone() })
            .collect();
        let base = team_discounted_total(&players).value;
        let s = team_discounted_total(&scaled).value;
        prop_assert!((s - c * base).abs() <= 1e-12 * (1.0 + c * base));

        let doubled: Vec<_> = players
            .iter()
            .map(|p| PlayerProfile { past_scores: p.past_scores.iter().map(|z| 2.0 * z).collect(), ..p.clone() })
            .collect();
        let sum: Vec<_> = players
            .iter()
            .zip(&doubled)
            .map(|(p, q)| PlayerProfile { past_scores: p.past_scores.iter().zip(&q.past_scores).map(|(a, b)| a + b).collect(), ..p.clone() })
            .collect();
        let additive = team_discounted_total(&players).value + team_discounted_total(&doubled).value;
        prop_assert!((team_discounted_total(&sum).value - additive).abs() <= 1e-12 * (1.0 + additive));
    }

    #[test]
    fn team_total_ignores_player_order(
        rows in prop::collection::vec((1e-3f64..=1.0, scores()), 2..12),
        seed in any::<u64>(),
    ) {
        let players: Vec<_> = rows.iter().enumerate().map(|(i, (r, z))| profile(i + 1, *r, z.clone())).collect();
        let mut shuffled = players.clone();
        // deterministic Fisher-Yates driven by the drawn seed
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1_442_695_040_888_963_407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = team_discounted_total(&players).value;
        let b = team_discounted_total(&shuffled).value;
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
    }

    #[test]
    fn config_round_trips(
        total_balls in 1u32..400,
        seed in any::<u64>(),
        rhos in prop::collection::vec(1e-3f64..=1.0, 11),
        corr in prop::array::uniform3(-0.99f64..0.99),
        share in 0.0f64..=1.0,
    ) {
        let mut c = MatchConfig { total_overs: total_balls as f64 / 6.0, ..MatchConfig::default() };
        c.simulation.wicket_schedule.retain(|&w| w <= c.total_overs);
        c.seed = seed;
        for (p, r) in c.players.iter_mut().zip(&rhos) {
            p.rho = *r;
        }
        c.environment.correlations = corr;
        c.rain.swing_share = share;
        prop_assert!(c.validate().is_ok());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        save_config(&c, &path).unwrap();
        prop_assert_eq!(load_config(&path).unwrap(), c);
    }
}
