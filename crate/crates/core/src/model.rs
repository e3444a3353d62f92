//! Player profiles, match configuration and the discounted-scoring objective.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bowler::BowlerParams;
use crate::dynamics::DriftParams;
use crate::environment::{AttendanceParams, DayNightParams, PressureParams, WeatherParams};
use crate::pathintegral::PenalizationParams;
use crate::rain::RainParams;

/// Number of past matches per player.
pub const DEFAULT_MATCHES: usize = 10;
/// Players per side.
pub const DEFAULT_PLAYERS: usize = 11;
/// Length of one delivery in overs.
pub const BALL: f64 = 1.0 / 6.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid {field} = {value}: {reason}")]
    Invalid { field: String, value: f64, reason: String },
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, value: f64, reason: impl Into<String>) -> Self {
        ConfigError::Invalid { field: field.into(), value, reason: reason.into() }
    }
}

/// Checks `lo < value < hi` (or `<=` on closed ends) and names the field on failure.
pub(crate) fn check_range(
    field: &str,
    value: f64,
    lo: f64,
    hi: f64,
    closed_lo: bool,
    closed_hi: bool,
) -> Result<(), ConfigError> {
    let lo_ok = if closed_lo { value >= lo } else { value > lo };
    let hi_ok = if closed_hi { value <= hi } else { value < hi };
    if value.is_finite() && lo_ok && hi_ok {
        return Ok(());
    }
    let (l, r) = (if closed_lo { "[" } else { "(" }, if closed_hi { "]" } else { ")" });
    Err(ConfigError::invalid(field, value, format!("must lie in {l}{lo}, {hi}{r}")))
}

pub(crate) fn check_positive(field: &str, value: f64) -> Result<(), ConfigError> {
    check_range(field, value, 0.0, f64::INFINITY, false, true)
        .map_err(|_| ConfigError::invalid(field, value, "must be positive and finite"))
}

pub(crate) fn check_non_negative(field: &str, value: f64) -> Result<(), ConfigError> {
    check_range(field, value, 0.0, f64::INFINITY, true, true)
        .map_err(|_| ConfigError::invalid(field, value, "must be non-negative and finite"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Batsman,
    Bowler,
    AllRounder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerProfile {
    /// 1-based position in the batting order.
    pub index: usize,
    /// Discount rate ρ in (0, 1].
    pub rho: f64,
    /// Runs in the previous matches, most recent first. A debutant has zeros.
    pub past_scores: Vec<f64>,
    /// Reputation-based valuation W.
    pub valuation: f64,
    pub role: Role,
}

impl PlayerProfile {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = format!("players[{}]", self.index);
        check_range(&format!("{p}.rho"), self.rho, 0.0, 1.0, false, true)?;
        check_non_negative(&format!("{p}.valuation"), self.valuation)?;
        for (m, &z) in self.past_scores.iter().enumerate() {
            check_non_negative(&format!("{p}.past_scores[{m}]"), z)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchType {
    Day,
    DayNight,
}

/// Snapshot of a match in progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub runs: Vec<f64>,
    pub over: f64,
    pub wickets: u8,
    pub innings: u8,
    pub match_type: MatchType,
    pub toss_won: bool,
}

impl RunState {
    pub fn start(players: usize) -> Self {
        RunState {
            runs: vec![0.0; players],
            over: 0.0,
            wickets: 0,
            innings: 1,
            match_type: MatchType::Day,
            toss_won: true,
        }
    }

    pub fn validate(&self, total_overs: f64) -> Result<(), ConfigError> {
        check_range("state.over", self.over, 0.0, total_overs, true, true)?;
        let balls = self.over * 6.0;
        if (balls - balls.round()).abs() > 1e-9 {
            return Err(ConfigError::invalid("state.over", self.over, "must be a multiple of 1/6"));
        }
        if self.wickets > 9 {
            return Err(ConfigError::invalid("state.wickets", self.wickets as f64, "must lie in 0..=9"));
        }
        if !(1..=2).contains(&self.innings) {
            return Err(ConfigError::invalid("state.innings", self.innings as f64, "must be 1 or 2"));
        }
        for (i, &z) in self.runs.iter().enumerate() {
            check_non_negative(&format!("state.runs[{i}]"), z)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentParams {
    pub pressure: PressureParams,
    pub attendance: AttendanceParams,
    pub day_night: DayNightParams,
    pub weather: WeatherParams,
    /// ρ₁, ρ₂, ρ₃ coupling p·A, 𝔅·A and 𝔅·p.
    pub correlations: [f64; 3],
    /// Overall multiplier on σ₁ + σ₂*.
    pub diffusion_scale: f64,
}

impl Default for EnvironmentParams {
    fn default() -> Self {
        EnvironmentParams {
            pressure: PressureParams::default(),
            attendance: AttendanceParams::default(),
            day_night: DayNightParams::default(),
            weather: WeatherParams::default(),
            correlations: [0.2, 0.1, 0.1],
            diffusion_scale: 0.002,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationParams {
    /// Euler step in overs; at most one ball.
    pub step: f64,
    /// Overs at which wickets fall, ascending.
    pub wicket_schedule: Vec<f64>,
    /// Coefficients β_i of the objective.
    pub objective_beta: Vec<f64>,
    /// Number of trajectories written to the paths table.
    pub recorded_paths: usize,
}

impl Default for SimulationParams {
    fn default() -> Self {
        SimulationParams {
            step: BALL,
            wicket_schedule: vec![6.0, 12.5, 19.0, 25.5, 31.0, 36.0, 40.5, 44.0, 47.5],
            objective_beta: vec![1.0; DEFAULT_PLAYERS],
            recorded_paths: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub players: Vec<PlayerProfile>,
    pub total_overs: f64,
    pub environment: EnvironmentParams,
    pub bowler: BowlerParams,
    pub drift: DriftParams,
    pub penalization: PenalizationParams,
    pub rain: RainParams,
    pub simulation: SimulationParams,
    pub seed: u64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            players: default_players(),
            total_overs: 50.0,
            environment: EnvironmentParams::default(),
            bowler: BowlerParams::default(),
            drift: DriftParams::default(),
            penalization: PenalizationParams::default(),
            rain: RainParams::default(),
            simulation: SimulationParams::default(),
            seed: 20_240_601,
        }
    }
}

fn default_players() -> Vec<PlayerProfile> {
    const BASE: [f64; DEFAULT_PLAYERS] = [44.0, 38.0, 51.0, 40.0, 33.0, 29.0, 24.0, 17.0, 11.0, 7.0, 4.0];
    const VALUATION: [f64; DEFAULT_PLAYERS] = [3.4, 2.9, 4.1, 3.0, 2.5, 2.2, 1.9, 1.2, 0.8, 0.5, 0.3];
    (0..DEFAULT_PLAYERS)
        .map(|i| PlayerProfile {
            index: i + 1,
            rho: 0.05 + 0.04 * i as f64,
            past_scores: (1..=DEFAULT_MATCHES)
                .map(|m| (BASE[i] * (1.0 + 0.3 * ((i * m) as f64).cos())).round())
                .collect(),
            valuation: VALUATION[i],
            role: match i {
                0..=4 => Role::Batsman,
                5 | 6 => Role::AllRounder,
                _ => Role::Bowler,
            },
        })
        .collect()
}

impl MatchConfig {
    pub fn n_players(&self) -> usize {
        self.players.len()
    }

    pub fn valuations(&self) -> Vec<f64> {
        self.players.iter().map(|p| p.valuation).collect()
    }

    /// Checks every invariant; returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>, ConfigError> {
        if self.players.is_empty() {
            return Err(ConfigError::invalid("players", 0.0, "at least one player required"));
        }
        for (k, p) in self.players.iter().enumerate() {
            if p.index != k + 1 {
                return Err(ConfigError::invalid(
                    format!("players[{k}].index"),
                    p.index as f64,
                    "indices must run 1..=I in order",
                ));
            }
            p.validate()?;
        }
        check_positive("total_overs", self.total_overs)?;
        let balls = self.total_overs * 6.0;
        if (balls - balls.round()).abs() > 1e-9 {
            return Err(ConfigError::invalid("total_overs", self.total_overs, "must be a multiple of 1/6"));
        }
        let env = &self.environment;
        env.pressure.validate()?;
        env.attendance.validate()?;
        env.day_night.validate()?;
        env.weather.validate()?;
        for (j, &r) in env.correlations.iter().enumerate() {
            check_range(&format!("environment.correlations[{j}] (rho{})", j + 1), r, -1.0, 1.0, false, false)?;
        }
        check_non_negative("environment.diffusion_scale", env.diffusion_scale)?;
        self.bowler.validate()?;
        self.drift.validate()?;
        self.penalization.validate()?;
        self.rain.validate()?;
        let sim = &self.simulation;
        check_range("simulation.step", sim.step, 0.0, BALL, false, true)?;
        let mut last = 0.0;
        for (k, &w) in sim.wicket_schedule.iter().enumerate() {
            check_range(&format!("simulation.wicket_schedule[{k}]"), w, last, self.total_overs, true, true)?;
            last = w;
        }
        if sim.wicket_schedule.len() > 9 {
            return Err(ConfigError::invalid(
                "simulation.wicket_schedule",
                sim.wicket_schedule.len() as f64,
                "at most 9 wickets",
            ));
        }
        if sim.objective_beta.len() != self.players.len() {
            return Err(ConfigError::invalid(
                "simulation.objective_beta",
                sim.objective_beta.len() as f64,
                "needs one coefficient per player",
            ));
        }

        let mut warnings = Vec::new();
        for (a, pa) in self.players.iter().enumerate() {
            for pb in &self.players[a + 1..] {
                if pa.rho == pb.rho {
                    warnings
                        .push(format!("players {} and {} share discount rate rho = {}", pa.index, pb.index, pa.rho));
                }
            }
        }
        Ok(warnings)
    }
}

/// Reads and validates a JSON config. Missing sections take their defaults.
pub fn load_config(path: &Path) -> Result<MatchConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
    let config: MatchConfig =
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
    for w in config.validate()? {
        log::warn!("{w}");
    }
    Ok(config)
}

pub fn save_config(config: &MatchConfig, path: &Path) -> Result<(), ConfigError> {
    let text = serde_json::to_string_pretty(config).expect("config serialises");
    std::fs::write(path, text).map_err(|source| ConfigError::Io { path: path.into(), source })
}

/// u_i = Σ_m e^{-ρ m} Z_im with m = 1 the most recent match.
pub fn discounted_score(profile: &PlayerProfile) -> f64 {
    profile.past_scores.iter().enumerate().map(|(k, z)| (-profile.rho * (k + 1) as f64).exp() * z).sum()
}

impl PlayerProfile {
    /// The profile with `runs` recorded as the most recent match; the oldest match drops out.
    pub fn with_current_innings(&self, runs: f64) -> PlayerProfile {
        let mut past_scores = Vec::with_capacity(self.past_scores.len().max(1));
        past_scores.push(runs);
        past_scores.extend(self.past_scores.iter().take(self.past_scores.len().saturating_sub(1)));
        PlayerProfile { past_scores, ..self.clone() }
    }
}

/// Σ_i β_i u_i after recording `runs` as match m = 1 for every player.
pub fn objective_value(players: &[PlayerProfile], runs: &[f64], beta: &[f64]) -> f64 {
    crate::stats::compensated_sum(
        players.iter().zip(runs).zip(beta).map(|((p, &z), &b)| b * discounted_score(&p.with_current_innings(z))),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeamTotal {
    pub value: f64,
    /// Every past score is zero, so the total cannot serve as a denominator.
    pub degenerate: bool,
}

/// D = Σ_i u_i over the roster.
pub fn team_discounted_total(players: &[PlayerProfile]) -> TeamTotal {
    let value = crate::stats::compensated_sum(players.iter().map(discounted_score));
    let degenerate = players.iter().all(|p| p.past_scores.iter().all(|&z| z == 0.0));
    TeamTotal { value, degenerate }
}
