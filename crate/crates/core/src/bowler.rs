//! The opposition-bowler term σ₂*: payoff mixture, von Koch snowflake strategy space,
//! Loewner-type evolution and the closed-form characteristic function.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{check_non_negative, check_positive, check_range, ConfigError};

#[derive(Debug, Error, PartialEq)]
pub enum BowlerError {
    #[error("{what} vanishes ({value}); characteristic function undefined")]
    ZeroDenominator { what: &'static str, value: f64 },
    #[error("delivery {field} = {value} outside its domain {domain}")]
    Domain { field: &'static str, value: f64, domain: &'static str },
    #[error("Loewner step singular at g = {g}, drive = {drive} after {halvings} halvings")]
    Singular { g: f64, drive: f64, halvings: u32 },
    #[error("{0} must be non-negative")]
    Negative(&'static str),
}

/// Number of sides θ̂ = 3·4^η, side length θ̃ = (1/3)^η and perimeter Ξ = θ̂·θ̃.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SnowflakeShape {
    pub sides: f64,
    pub side_length: f64,
    pub perimeter: f64,
}

pub fn perimeter_and_sides(eta: f64) -> SnowflakeShape {
    let sides = 3.0 * 4f64.powf(eta);
    let side_length = (1.0f64 / 3.0).powf(eta);
    SnowflakeShape { sides, side_length, perimeter: sides * side_length }
}

/// Υ_η = (Δ/5)(8 − 3(4/9)^η), extended to real η.
pub fn snowflake_area(eta: f64, delta: f64) -> f64 {
    delta / 5.0 * (8.0 - 3.0 * (4.0f64 / 9.0).powf(eta))
}

/// Increment constant for which the recursion reproduces the closed form.
pub const SNOWFLAKE_INCREMENT: f64 = 0.75;

/// Υ_η by the recursion Υ_k = Υ_{k−1} + c(4/9)^k Δ from Υ₀ = Δ, integer η.
///
/// Only `c = 3/4` agrees with [`snowflake_area`]; other constants are accepted so that
/// validation runs can inject a faulty value.
pub fn snowflake_area_recursive(eta: u32, delta: f64, increment: f64) -> f64 {
    let mut area = delta;
    let mut w = 1.0;
    for _ in 0..eta {
        w *= 4.0 / 9.0;
        area += increment * w * delta;
    }
    area
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaCoefficients {
    pub c1: f64,
    pub c2: f64,
}

impl Default for EtaCoefficients {
    fn default() -> Self {
        EtaCoefficients { c1: 1.0, c2: 1.0 }
    }
}

/// η(𝒜) = c₁(e^{c₂𝒜} − 1): zero at zero payoff, increasing and convex.
pub fn eta_of_payoff(payoff: f64, c: EtaCoefficients) -> f64 {
    c.c1 * (c.c2 * payoff).exp_m1()
}

/// One delivery: speed (mph), dispersion (inches), release angles and the batsman's guess.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Delivery {
    pub speed: f64,
    pub dispersion: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub guess: f64,
}

impl Delivery {
    pub fn validate(&self) -> Result<(), BowlerError> {
        let dom = |ok: bool, field, value, domain| {
            if ok {
                Ok(())
            } else {
                Err(BowlerError::Domain { field, value, domain })
            }
        };
        dom(self.speed > 0.0 && self.speed.is_finite(), "speed", self.speed, "(0, inf)")?;
        dom(self.dispersion >= 0.0 && self.dispersion.is_finite(), "dispersion", self.dispersion, "[0, inf)")?;
        dom(self.theta1 > FRAC_PI_2 && self.theta1 <= PI, "theta1", self.theta1, "(pi/2, pi]")?;
        dom(self.theta2 > 0.0 && self.theta2 <= PI / 36.0, "theta2", self.theta2, "(0, pi/36]")?;
        dom((0.0..=1.0).contains(&self.guess), "guess", self.guess, "[0, 1]")
    }
}

/// Affine payoff a₀ + a_s·s + a_x·x + a_θ₁·θ₁ + a_θ₂·θ₂ + a_G·G.
///
/// A pacer's payoff ignores the angles and a leg spinner's ignores θ₂; set those weights to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PayoffForm {
    pub intercept: f64,
    pub speed: f64,
    pub dispersion: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub guess: f64,
}

impl PayoffForm {
    pub fn eval(&self, d: &Delivery) -> f64 {
        self.intercept
            + self.speed * d.speed
            + self.dispersion * d.dispersion
            + self.theta1 * d.theta1
            + self.theta2 * d.theta2
            + self.guess * d.guess
    }

    /// Mean payoff over an equally weighted sample of deliveries.
    pub fn expected(&self, deliveries: &[Delivery]) -> Result<f64, BowlerError> {
        let mut sum = 0.0;
        for d in deliveries {
            d.validate()?;
            sum += self.eval(d);
        }
        Ok(sum / deliveries.len().max(1) as f64)
    }
}

/// Payoff form and delivery sample for one bowler type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BowlerType {
    pub payoff: PayoffForm,
    pub deliveries: Vec<Delivery>,
}

impl BowlerType {
    pub fn expected_payoff(&self) -> Result<f64, BowlerError> {
        self.payoff.expected(&self.deliveries)
    }
}

/// 𝒜 = ℘₁𝔼A₁ + ℘₂𝔼A₂ + ℘₃𝔼A₃.
pub fn expected_payoff_mixture(probabilities: [f64; 3], expected: [f64; 3]) -> f64 {
    probabilities.iter().zip(&expected).map(|(p, a)| p * a).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoewnerCoefficients {
    pub kappa: f64,
    /// Scalar stand-in for the generator term 𝓛g̃.
    pub lg: f64,
    /// Evaluation point ĝ of the shifted map.
    pub g_hat: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacteristicFunction {
    /// c = (√(κΥ)𝓛g̃ + ĝ)² / ĝ².
    rate: f64,
    /// κΥ𝓛g̃ / (√(κΥ)𝓛g̃ + ĝ).
    k: f64,
    horizon: f64,
    /// κΥ𝓛g̃ / ĝ, the diffusion coefficient of the shifted map.
    vol: f64,
}

impl CharacteristicFunction {
    pub fn new(coeffs: &LoewnerCoefficients, area: f64) -> Result<Self, BowlerError> {
        if coeffs.kappa < 0.0 {
            return Err(BowlerError::Negative("kappa"));
        }
        if area < 0.0 {
            return Err(BowlerError::Negative("snowflake area"));
        }
        if coeffs.g_hat == 0.0 {
            return Err(BowlerError::ZeroDenominator { what: "g_hat", value: 0.0 });
        }
        let ku = coeffs.kappa * area;
        let shift = ku.sqrt() * coeffs.lg + coeffs.g_hat;
        if shift == 0.0 {
            return Err(BowlerError::ZeroDenominator { what: "sqrt(kappa*area)*Lg + g_hat", value: shift });
        }
        Ok(CharacteristicFunction {
            rate: (shift / coeffs.g_hat).powi(2),
            k: ku * coeffs.lg / shift,
            horizon: coeffs.horizon,
            vol: ku * coeffs.lg / coeffs.g_hat,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Coefficient of −½θ²α² in dβ/du.
    pub fn vol(&self) -> f64 {
        self.vol
    }

    /// α(u) = exp(−c(U − u)).
    pub fn alpha(&self, u: f64) -> f64 {
        (-self.rate * (self.horizon - u)).exp()
    }

    /// β(u) = −¼θ²k²(e^{−2c(U−u)} − 1).
    pub fn beta(&self, u: f64, theta: f64) -> f64 {
        -0.25 * theta * theta * self.k * self.k * (-2.0 * self.rate * (self.horizon - u)).exp_m1()
    }

    /// Φ(θ) = exp(iθα(0) + β(0)).
    pub fn phi(&self, theta: f64) -> Complex64 {
        Complex64::new(self.beta(0.0, theta), theta * self.alpha(0.0)).exp()
    }

    pub fn evaluate(&self, theta: f64) -> CharFnResult {
        let beta0 = self.beta(0.0, theta);
        CharFnResult { alpha0: self.alpha(0.0), beta0, phi: self.phi(theta), sigma2_star: beta0.exp() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharFnResult {
    pub alpha0: f64,
    pub beta0: f64,
    pub phi: Complex64,
    /// (ΦΦ̄)^{1/2} = e^{β₀}.
    pub sigma2_star: f64,
}

pub fn characteristic_fn(theta: f64, coeffs: &LoewnerCoefficients, area: f64) -> Result<CharFnResult, BowlerError> {
    Ok(CharacteristicFunction::new(coeffs, area)?.evaluate(theta))
}

/// σ₂* = e^{β₀} at the reference θ. Never below 1 since β₀ ≥ 0.
pub fn sigma2_star(theta_ref: f64, coeffs: &LoewnerCoefficients, area: f64) -> Result<f64, BowlerError> {
    Ok(characteristic_fn(theta_ref, coeffs, area)?.sigma2_star)
}

/// Denominator guard for [`loewner_step`].
pub const LOEWNER_GUARD: f64 = 1e-8;
const MAX_HALVINGS: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoewnerStep {
    pub g: f64,
    /// Step actually taken; smaller than requested after rejections.
    pub du: f64,
    pub halvings: u32,
}

/// One RK4 step of ∂g/∂u = g(a + g)/(a − g) with a = √(κΥ)𝔚 held fixed over the step.
///
/// A stage whose denominator falls below [`LOEWNER_GUARD`], or a step that would carry g
/// across the pole at a, is rejected and retried with half the step.
pub fn loewner_step(g: f64, drive: f64, kappa: f64, area: f64, du: f64) -> Result<LoewnerStep, BowlerError> {
    let a = (kappa * area).sqrt() * drive;
    let rhs = |g: f64| -> Option<f64> {
        let den = a - g;
        (den.abs() >= LOEWNER_GUARD).then(|| g * (a + g) / den)
    };
    let mut h = du;
    for halvings in 0..=MAX_HALVINGS {
        let stages = (|| {
            let k1 = rhs(g)?;
            let k2 = rhs(g + 0.5 * h * k1)?;
            let k3 = rhs(g + 0.5 * h * k2)?;
            let k4 = rhs(g + h * k3)?;
            Some(g + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        })();
        if let Some(next) = stages {
            let same_side = (a - next).signum() == (a - g).signum() && (a - next).abs() >= LOEWNER_GUARD;
            if next.is_finite() && (same_side || g == a) {
                return Ok(LoewnerStep { g: next, du: h, halvings });
            }
        }
        h *= 0.5;
    }
    Err(BowlerError::Singular { g, drive: a, halvings: MAX_HALVINGS })
}

/// Evolves g over `[0, horizon]` driven by a standard Brownian motion 𝔚.
///
/// Returns the `(u, g)` trajectory at each accepted step.
pub fn simulate_loewner<R: Rng + ?Sized>(
    g0: f64,
    kappa: f64,
    area: f64,
    horizon: f64,
    du: f64,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>, BowlerError> {
    let mut out = vec![(0.0, g0)];
    let (mut u, mut g, mut w) = (0.0, g0, 0.0);
    while u < horizon - 1e-12 {
        let h = du.min(horizon - u);
        let step = loewner_step(g, w, kappa, area, h)?;
        let z: f64 = rng.sample(StandardNormal);
        w += step.du.sqrt() * z;
        u += step.du;
        g = step.g;
        out.push((u, g));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BowlerParams {
    /// ℘₁, ℘₂, ℘₃: probabilities of a pacer, leg spinner and off spinner.
    pub mixture: [f64; 3],
    pub pacer: BowlerType,
    pub leg_spin: BowlerType,
    pub off_spin: BowlerType,
    /// Base triangle area Δ.
    pub delta: f64,
    pub eta: EtaCoefficients,
    pub kappa: f64,
    pub lg: f64,
    pub g_hat: f64,
    /// θ at which σ₂* is evaluated.
    pub theta_ref: f64,
}

impl Default for BowlerParams {
    fn default() -> Self {
        let d = |speed, dispersion, theta1, guess| Delivery { speed, dispersion, theta1, theta2: PI / 40.0, guess };
        BowlerParams {
            mixture: [0.5, 0.25, 0.25],
            pacer: BowlerType {
                payoff: PayoffForm {
                    intercept: 0.1,
                    speed: 0.004,
                    dispersion: -0.01,
                    guess: 0.3,
                    ..Default::default()
                },
                deliveries: vec![d(88.0, 4.0, 2.0, 0.6), d(84.0, 8.0, 2.0, 0.4), d(91.0, 2.0, 2.0, 0.7)],
            },
            leg_spin: BowlerType {
                payoff: PayoffForm { intercept: 0.2, speed: 0.002, theta1: -0.05, guess: 0.25, ..Default::default() },
                deliveries: vec![d(52.0, 12.0, 2.3, 0.5), d(55.0, 9.0, 2.6, 0.3)],
            },
            off_spin: BowlerType {
                payoff: PayoffForm { intercept: 0.15, speed: 0.002, theta2: 1.0, guess: 0.25, ..Default::default() },
                deliveries: vec![d(54.0, 10.0, 2.2, 0.5), d(50.0, 14.0, 2.8, 0.45)],
            },
            delta: 1.0,
            eta: EtaCoefficients::default(),
            kappa: 1.0,
            lg: 0.0,
            g_hat: 1.0,
            theta_ref: 1.0,
        }
    }
}

impl BowlerParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (j, &p) in self.mixture.iter().enumerate() {
            check_range(&format!("bowler.mixture[{j}] (℘{})", j + 1), p, 0.0, 1.0, true, true)?;
        }
        let total: f64 = self.mixture.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(ConfigError::invalid("bowler.mixture (℘)", total, "probabilities must sum to 1"));
        }
        for (name, t) in [("pacer", &self.pacer), ("leg_spin", &self.leg_spin), ("off_spin", &self.off_spin)] {
            if t.deliveries.is_empty() {
                return Err(ConfigError::invalid(
                    format!("bowler.{name}.deliveries"),
                    0.0,
                    "need at least one delivery",
                ));
            }
            for (k, d) in t.deliveries.iter().enumerate() {
                if let Err(BowlerError::Domain { field, value, domain }) = d.validate() {
                    return Err(ConfigError::invalid(
                        format!("bowler.{name}.deliveries[{k}].{field}"),
                        value,
                        format!("outside {domain}"),
                    ));
                }
            }
        }
        check_positive("bowler.delta", self.delta)?;
        check_positive("bowler.eta.c1", self.eta.c1)?;
        check_positive("bowler.eta.c2", self.eta.c2)?;
        check_non_negative("bowler.kappa", self.kappa)?;
        check_range("bowler.lg", self.lg, f64::MIN, f64::MAX, true, true)?;
        if self.g_hat == 0.0 || !self.g_hat.is_finite() {
            return Err(ConfigError::invalid("bowler.g_hat", self.g_hat, "must be finite and nonzero"));
        }
        check_range("bowler.theta_ref", self.theta_ref, f64::MIN, f64::MAX, true, true)
    }

    pub fn expected_payoffs(&self) -> Result<[f64; 3], BowlerError> {
        Ok([self.pacer.expected_payoff()?, self.leg_spin.expected_payoff()?, self.off_spin.expected_payoff()?])
    }

    /// Full chain 𝒜 → η → Υ_η → σ₂*.
    pub fn summary(&self, horizon: f64) -> Result<BowlerSummary, BowlerError> {
        let payoffs = self.expected_payoffs()?;
        let mixture = expected_payoff_mixture(self.mixture, payoffs);
        // η must stay non-negative; a negative mean payoff is treated as no strategy growth
        let eta = eta_of_payoff(mixture.max(0.0), self.eta);
        let area = snowflake_area(eta, self.delta);
        let coeffs = self.coefficients(horizon);
        let cf = characteristic_fn(self.theta_ref, &coeffs, area)?;
        Ok(BowlerSummary {
            expected_payoffs: payoffs,
            mixture,
            eta,
            shape: perimeter_and_sides(eta),
            area,
            alpha0: cf.alpha0,
            beta0: cf.beta0,
            sigma2_star: cf.sigma2_star,
        })
    }

    pub fn coefficients(&self, horizon: f64) -> LoewnerCoefficients {
        LoewnerCoefficients { kappa: self.kappa, lg: self.lg, g_hat: self.g_hat, horizon }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BowlerSummary {
    pub expected_payoffs: [f64; 3],
    pub mixture: f64,
    pub eta: f64,
    pub shape: SnowflakeShape,
    pub area: f64,
    pub alpha0: f64,
    pub beta0: f64,
    pub sigma2_star: f64,
}
