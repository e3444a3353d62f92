use std::path::{Path, PathBuf};
use std::process::Command;

use odi_core::model::{save_config, MatchConfig, PlayerProfile};
use serde_json::{json, Value};
use tempfile::TempDir;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn odi(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_odi")).args(args).output().expect("spawn odi");
    Run {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, config: &MatchConfig) -> PathBuf {
    let path = dir.join(name);
    save_config(config, &path).unwrap();
    path
}

fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Drift offset `c` for every player, no valuation coupling, diffusion scaled by `scale`.
fn constant_drift(c: f64, scale: f64) -> MatchConfig {
    let mut config = MatchConfig::default();
    config.drift.offset = c;
    config.drift.valuation_coupling = 0.0;
    config.drift.growth = 1e3;
    config.environment.diffusion_scale = scale;
    config
}

fn one_player() -> MatchConfig {
    let mut config = MatchConfig::default();
    let p: PlayerProfile = config.players[0].clone();
    config.players = vec![p];
    config.simulation.objective_beta = vec![1.0];
    config.simulation.wicket_schedule.clear();
    config
}

fn scalar_snapshot(cov_sens: f64, discounted: f64) -> Value {
    json!({
        "over": 10.0,
        "runs": [12.0],
        "discounted": [discounted],
        "derivatives": {
            "g_z": [2.0],
            "g_zz": [[1.0]],
            "drift_jacobian": [[1.0]],
            "covariance_sensitivity": [[[cov_sens]]]
        }
    })
}

#[test]
fn zero_coefficients_give_zero_total() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "zero.json", &constant_drift(0.0, 0.0));
    let out = dir.path().join("out");
    let r = odi(&["--config", path_str(&cfg), "--paths", "50", "--out-dir", path_str(&out), "simulate"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let s = read_json(out.join("summary.json"));
    assert_eq!(s["ensemble"]["expected_total"]["value"].as_f64().unwrap(), 0.0);
}

#[test]
fn constant_drift_accumulates_linearly() {
    let dir = TempDir::new().unwrap();
    let c = 5.0;
    let config = constant_drift(c, 0.002);
    let expected = c * config.total_overs * config.n_players() as f64;
    let cfg = write_config(dir.path(), "drift.json", &config);
    let out = dir.path().join("out");
    let r = odi(&["--config", path_str(&cfg), "--paths", "2000", "--out-dir", path_str(&out), "simulate"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let s = read_json(out.join("summary.json"));
    let total = &s["ensemble"]["expected_total"];
    let (v, se) = (total["value"].as_f64().unwrap(), total["se"].as_f64().unwrap());
    assert!((v - expected).abs() <= 4.0 * se, "{v} ± {se} vs {expected}");
    assert!(r.stdout.contains("expected team total"));
}

#[test]
fn fixed_seed_reproduces_bytes() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let r = odi(&["--seed", "17", "--paths", "200", "--out-dir", path_str(&out), "simulate"]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        (std::fs::read(out.join("summary.json")).unwrap(), std::fs::read(out.join("paths.csv")).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn beta_from_snapshot_overrides() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "one.json", &one_player());
    let snap = write_json(dir.path(), "snap.json", &scalar_snapshot(1.0, 10.0));
    let out = dir.path().join("beta");
    let r = odi(&["--config", path_str(&cfg), "--out-dir", path_str(&out), "beta", "--snapshot", path_str(&snap)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let b = read_json(out.join("beta.json"));
    assert!((b["beta_star"].as_f64().unwrap() + 0.25).abs() < 1e-12);
    assert!(b["players"][0]["residual"].as_f64().unwrap().abs() < 1e-12);
    let csv = std::fs::read_to_string(out.join("residuals.csv")).unwrap();
    assert!(csv.starts_with("player,beta,bracket,discounted,residual"));
}

#[test]
fn rain_beta_from_snapshot_overrides() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "one.json", &one_player());
    let snap = write_json(dir.path(), "snap.json", &scalar_snapshot(1.5, 10.0));
    let out = dir.path().join("rain");
    let r = odi(&[
        "--config",
        path_str(&cfg),
        "--paths",
        "100",
        "--out-dir",
        path_str(&out),
        "rain-resume",
        "--snapshot",
        path_str(&snap),
        "--excess",
        "2",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let j = read_json(out.join("rain.json"));
    assert_eq!(j["status"], "resumed");
    assert!((j["beta_star_rain"]["beta_star"].as_f64().unwrap() + 0.275).abs() < 1e-12);
    assert!((j["beta_star_dry"]["beta_star"].as_f64().unwrap() + 0.275).abs() < 1e-12);
}

#[test]
fn constant_penalization_gives_zero_beta() {
    let dir = TempDir::new().unwrap();
    let mut config = MatchConfig::default();
    config.penalization.a = 0.0;
    config.penalization.d = 3.0;
    let cfg = write_config(dir.path(), "flat.json", &config);
    let snap = write_json(
        dir.path(),
        "snap.json",
        &json!({ "over": 20.0, "runs": [30.0, 25.0, 10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0] }),
    );
    let out = dir.path().join("beta");
    let r = odi(&["--config", path_str(&cfg), "--out-dir", path_str(&out), "beta", "--snapshot", path_str(&snap)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let b = read_json(out.join("beta.json"));
    for p in b["players"].as_array().unwrap() {
        assert_eq!(p["beta"].as_f64().unwrap(), 0.0);
    }
}

#[test]
fn missing_snapshot_is_io_error() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let r = odi(&["--out-dir", path_str(&out), "beta", "--snapshot", path_str(&dir.path().join("absent.json"))]);
    assert_eq!(r.code, 4, "{}", r.stderr);
    assert!(r.stderr.contains("absent.json"));
}

#[test]
fn degenerate_denominator_is_math_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "one.json", &one_player());
    let snap = write_json(dir.path(), "snap.json", &scalar_snapshot(1.0, 0.0));
    let r = odi(&[
        "--config",
        path_str(&cfg),
        "--out-dir",
        path_str(&dir.path().join("o")),
        "beta",
        "--snapshot",
        path_str(&snap),
    ]);
    assert_eq!(r.code, 3, "{}", r.stderr);
}

#[test]
fn invalid_config_is_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_json(dir.path(), "bad.json", &json!({ "bowler": { "mixture": [0.5, 0.2, 0.2] } }));
    let r = odi(&["--config", path_str(&cfg), "--out-dir", path_str(&dir.path().join("o")), "simulate"]);
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert!(r.stderr.contains("mixture"));
}

#[test]
fn zero_severity_resumes_as_dry() {
    let dir = TempDir::new().unwrap();
    let snap = write_json(
        dir.path(),
        "snap.json",
        &json!({ "over": 20.0, "wickets": 3, "runs": [40.0, 35.0, 12.0, 8.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0] }),
    );
    let out = dir.path().join("rain");
    let r = odi(&[
        "--paths",
        "300",
        "--out-dir",
        path_str(&out),
        "rain-resume",
        "--snapshot",
        path_str(&snap),
        "--severity",
        "0",
        "--excess",
        "3",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let j = read_json(out.join("rain.json"));
    assert_eq!(j["rain_effective"], false);
    assert_eq!(j["lost_overs"].as_f64().unwrap(), 0.0);
    assert_eq!(j["resumed"]["expected_total"], j["dry_continuation"]["expected_total"]);
    assert_eq!(j["liouville_weight"].as_f64().unwrap(), 0.0);
}

#[test]
fn washed_out_innings_does_not_resume() {
    let dir = TempDir::new().unwrap();
    let snap = write_json(
        dir.path(),
        "snap.json",
        &json!({ "over": 40.0, "runs": [60.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0] }),
    );
    let out = dir.path().join("rain");
    let r = odi(&["--out-dir", path_str(&out), "rain-resume", "--snapshot", path_str(&snap), "--excess", "100"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let j = read_json(out.join("rain.json"));
    assert_eq!(j["status"], "no_resume");
    assert_eq!(j["lost_overs"].as_f64().unwrap(), 10.0);
    assert!(out.join("revised_totals.csv").exists());
}

#[test]
fn injected_fault_fails_validation() {
    let dir = TempDir::new().unwrap();
    let r = odi(&[
        "--paths",
        "2000",
        "--out-dir",
        path_str(&dir.path().join("v")),
        "validate",
        "--inject-fault",
        "snowflake",
    ]);
    assert_eq!(r.code, 5, "{}\n{}", r.stdout, r.stderr);
}

#[test]
fn replay_check_passes() {
    let dir = TempDir::new().unwrap();
    let first = dir.path().join("first");
    let r =
        odi(&["--paths", "100", "--workers", "4", "--out-dir", path_str(&first), "bowler-diagnose", "--max-eta", "12"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let again = dir.path().join("again");
    let manifest = first.join("manifest.json");
    let r = odi(&["--workers", "1", "--out-dir", path_str(&again), "replay", path_str(&manifest), "--check"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let m = read_json(manifest);
    for o in m["outputs"].as_array().unwrap() {
        let f = o["file"].as_str().unwrap();
        assert_eq!(std::fs::read(first.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn tampered_manifest_is_rejected() {
    let dir = TempDir::new().unwrap();
    let first = dir.path().join("first");
    assert_eq!(odi(&["--paths", "20", "--out-dir", path_str(&first), "simulate"]).code, 0);
    let mut m = read_json(first.join("manifest.json"));
    m["invocation"]["config"]["total_overs"] = json!(40.0);
    let bad = write_json(dir.path(), "bad.json", &m);
    let r = odi(&["--out-dir", path_str(&dir.path().join("x")), "replay", path_str(&bad)]);
    assert_eq!(r.code, 2, "{}", r.stderr);
}
