//! Environment terms of the diffusion: pressure, attendance, the day/day-night effect and
//! the Weierstrass weather series, composed into σ₁.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{check_non_negative, check_positive, check_range, ConfigError};

#[derive(Debug, Error, PartialEq)]
pub enum EnvironmentError {
    #[error("sigma1 term `{term}` is not finite ({value})")]
    NonFinite { term: &'static str, value: f64 },
    #[error("sigma1 inputs have mismatched lengths: p has {p}, A has {a}")]
    Shape { p: usize, a: usize },
}

/// Numerically stable ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PressureParams {
    pub scale: f64,
    pub sharpness: f64,
    /// Expected runs per over for each player, giving 𝔼_u(Z) = rate·u.
    pub expected_rate: f64,
}

impl Default for PressureParams {
    fn default() -> Self {
        PressureParams { scale: 1.0, sharpness: 0.5, expected_rate: 0.5 }
    }
}

impl PressureParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_positive("environment.pressure.scale", self.scale)?;
        check_positive("environment.pressure.sharpness", self.sharpness)?;
        check_non_negative("environment.pressure.expected_rate", self.expected_rate)
    }
}

/// p_i = scale · softplus(sharpness · (𝔼Z_i − Z_i)) / sharpness.
///
/// Non-negative, smooth, and grows linearly with the shortfall.
pub fn pressure(z: &[f64], expected: &[f64], params: &PressureParams) -> Vec<f64> {
    z.iter()
        .zip(expected)
        .map(|(z, e)| params.scale * softplus(params.sharpness * (e - z)) / params.sharpness)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttendanceParams {
    pub capacity: f64,
    pub valuation_slope: f64,
    /// Rate at which attendance drifts with the over; positive while batting, negated once out.
    pub decay_when_out: f64,
}

impl Default for AttendanceParams {
    fn default() -> Self {
        AttendanceParams { capacity: 1.0, valuation_slope: 0.8, decay_when_out: 0.02 }
    }
}

impl AttendanceParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_positive("environment.attendance.capacity", self.capacity)?;
        check_positive("environment.attendance.valuation_slope", self.valuation_slope)?;
        check_range("environment.attendance.decay_when_out", self.decay_when_out, f64::MIN, f64::MAX, true, true)
    }
}

/// A_i = capacity · logistic(slope · W_i ± decay · u), `+` while player i is on the field.
pub fn attendance(u: f64, w: &[f64], on_field: &[bool], params: &AttendanceParams) -> Vec<f64> {
    w.iter()
        .zip(on_field)
        .map(|(&wi, &on)| {
            let sign = if on { 1.0 } else { -1.0 };
            params.capacity * logistic(params.valuation_slope * wi + sign * params.decay_when_out * u)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Toss {
    Won,
    Lost,
    /// No toss information: the full effect.
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DayNightParams {
    /// Expected first/second innings scores in day matches.
    pub e_d1: f64,
    pub e_d2: f64,
    /// Expected first/second innings scores in day-night matches.
    pub e_dn1: f64,
    pub e_dn2: f64,
    pub toss: Toss,
}

impl Default for DayNightParams {
    fn default() -> Self {
        DayNightParams { e_d1: 265.0, e_d2: 248.0, e_dn1: 272.0, e_dn2: 241.0, toss: Toss::Unknown }
    }
}

impl DayNightParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_non_negative("environment.day_night.e_d1", self.e_d1)?;
        check_non_negative("environment.day_night.e_d2", self.e_d2)?;
        check_non_negative("environment.day_night.e_dn1", self.e_dn1)?;
        check_non_negative("environment.day_night.e_dn2", self.e_dn2)
    }
}

/// 𝔅: won toss ½(½E_D2 + ½E_DN1), lost toss ½(½E_D1 + ½E_DN2), unknown the sum of both.
pub fn day_night_effect(e: &DayNightParams, toss: Toss) -> f64 {
    let won = 0.5 * (0.5 * e.e_d2 + 0.5 * e.e_dn1);
    let lost = 0.5 * (0.5 * e.e_d1 + 0.5 * e.e_dn2);
    match toss {
        Toss::Won => won,
        Toss::Lost => lost,
        Toss::Unknown => won + lost,
    }
}

const WEATHER_TAIL_TOL: f64 = 1e-12;
const WEATHER_MAX_TERMS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeatherParams {
    /// Dew point measure λ₁.
    pub lambda1: f64,
    /// Wind speed λ₂.
    pub lambda2: f64,
    /// Penalisation exponent s in (1, 2).
    pub s: f64,
    /// Fixed number of terms; `None` picks the smallest count with tail below 1e-12.
    pub truncation_terms: Option<usize>,
}

impl Default for WeatherParams {
    fn default() -> Self {
        WeatherParams { lambda1: 1.2, lambda2: 0.6, s: 1.5, truncation_terms: None }
    }
}

impl WeatherParams {
    pub fn base(&self) -> f64 {
        self.lambda1 + self.lambda2
    }

    /// Amplitude ratio r = (λ₁+λ₂)^{s−2}.
    pub fn ratio(&self) -> f64 {
        self.base().powf(self.s - 2.0)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check_non_negative("environment.weather.lambda1", self.lambda1)?;
        check_non_negative("environment.weather.lambda2", self.lambda2)?;
        if !(self.base() > 1.0) {
            return Err(ConfigError::invalid(
                "environment.weather.lambda1 + lambda2",
                self.base(),
                "weather exponent base must exceed 1",
            ));
        }
        check_range("environment.weather.s", self.s, 1.0, 2.0, false, false)?;
        if self.truncation_terms == Some(0) {
            return Err(ConfigError::invalid("environment.weather.truncation_terms", 0.0, "must be positive"));
        }
        Ok(())
    }

    /// Geometric bound r^{N+1}/(1−r) on the terms beyond N.
    pub fn tail_bound(&self, n: usize) -> f64 {
        let r = self.ratio();
        r.powf(n as f64 + 1.0) / (1.0 - r)
    }

    pub fn terms(&self) -> usize {
        if let Some(n) = self.truncation_terms {
            return n;
        }
        let r = self.ratio();
        // smallest N with r^{N+1} < tol (1 − r)
        let n = ((WEATHER_TAIL_TOL * (1.0 - r)).ln() / r.ln() - 1.0).ceil().max(1.0) as usize;
        let mut n = n.min(WEATHER_MAX_TERMS);
        while n < WEATHER_MAX_TERMS && self.tail_bound(n) >= WEATHER_TAIL_TOL {
            n += 1;
        }
        while n > 1 && self.tail_bound(n - 1) < WEATHER_TAIL_TOL {
            n -= 1;
        }
        n
    }
}

/// Z_e(u) = Σ_{α=1}^{N} r^α sin((λ₁+λ₂)^α u).
///
/// Terms whose phase overflows are dropped; their amplitude is already below the tail bound.
pub fn weierstrass_weather(u: f64, params: &WeatherParams) -> f64 {
    weierstrass_partial(u, params.base(), params.ratio(), params.terms())
}

pub fn weierstrass_partial(u: f64, base: f64, r: f64, terms: usize) -> f64 {
    let mut sum = 0.0;
    let mut amp = 1.0;
    for alpha in 1..=terms {
        amp *= r;
        let phase = base.powi(alpha as i32) * u;
        if !phase.is_finite() {
            break;
        }
        sum += amp * phase.sin();
    }
    sum
}

/// Inputs of σ₁ at one over.
#[derive(Debug, Clone, PartialEq)]
pub struct Sigma1Terms {
    pub pressure: Vec<f64>,
    pub attendance: Vec<f64>,
    pub day_night: f64,
    pub weather: f64,
}

/// σ₁ = p + A + 𝔅 + Z_e + ρ₁ pᵀA + ρ₂ Aᵀ𝔅 + ρ₃ 𝔅ᵀp, clamped at zero.
///
/// The scalars 𝔅 and Z_e and the three inner products are broadcast over players; 𝔅 acts
/// as the constant vector in the inner products.
pub fn sigma1(terms: &Sigma1Terms, correlations: [f64; 3]) -> Result<Vec<f64>, EnvironmentError> {
    let (p, a) = (&terms.pressure, &terms.attendance);
    if p.len() != a.len() {
        return Err(EnvironmentError::Shape { p: p.len(), a: a.len() });
    }
    let finite = |term: &'static str, value: f64| {
        if value.is_finite() {
            Ok(value)
        } else {
            Err(EnvironmentError::NonFinite { term, value })
        }
    };
    let b = terms.day_night;
    let pa = finite("rho1 p.A", correlations[0] * p.iter().zip(a).map(|(x, y)| x * y).sum::<f64>())?;
    let ab = finite("rho2 A.B", correlations[1] * b * a.iter().sum::<f64>())?;
    let bp = finite("rho3 B.p", correlations[2] * b * p.iter().sum::<f64>())?;
    let shared = finite("B + Z_e", b + terms.weather)?;
    p.iter()
        .zip(a)
        .map(|(pi, ai)| {
            let v = finite("sigma1", pi + ai + shared + pa + ab + bp)?;
            Ok(v.max(0.0))
        })
        .collect()
}
