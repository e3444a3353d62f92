//! Discretised path-integral transition kernel, its saddle-point (Laplace) step, the
//! Lagrangian density and the optimal valuation coefficient β*.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{check_non_negative, check_positive, ConfigError};
use crate::montecarlo::Executor;
use crate::quadrature::gauss_hermite;
use crate::stats::compensated_sum;

#[derive(Debug, Error)]
pub enum PathIntegralError {
    #[error("Lagrangian term `{term}` is not finite ({value})")]
    NonFinite { term: &'static str, value: f64 },
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("quadrature grid leaks: outer nodes carry {fraction:e} of the total")]
    BoundaryLeak { fraction: f64 },
    #[error("Newton search for the action minimum did not converge")]
    ModeSearch,
    #[error("transition function became non-positive ({0})")]
    NonPositive(f64),
    #[error("team discounted total D = {0}; beta* denominator vanishes")]
    DegenerateDenominator(f64),
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Dynamics(#[from] crate::dynamics::DynamicsError),
}

/// Penalisation function g(u, Z) with first and second derivatives.
pub trait PenalizationField: Sync {
    fn value(&self, u: f64, z: &[f64]) -> f64;
    fn d_u(&self, u: f64, z: &[f64]) -> f64;
    fn gradient(&self, u: f64, z: &[f64]) -> Vec<f64>;
    fn hessian(&self, u: f64, z: &[f64]) -> DMatrix<f64>;
}

/// g(u, Z) = a(1 + u²) exp(−‖Z‖²/(2c²)) + d.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenalizationParams {
    pub a: f64,
    pub c: f64,
    pub d: f64,
}

impl Default for PenalizationParams {
    fn default() -> Self {
        PenalizationParams { a: 1.0, c: 40.0, d: 0.0 }
    }
}

impl PenalizationParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_non_negative("penalization.a", self.a)?;
        check_positive("penalization.c", self.c)?;
        check_non_negative("penalization.d", self.d)
    }

    fn envelope(&self, z: &[f64]) -> f64 {
        (-z.iter().map(|x| x * x).sum::<f64>() / (2.0 * self.c * self.c)).exp()
    }
}

impl PenalizationField for PenalizationParams {
    fn value(&self, u: f64, z: &[f64]) -> f64 {
        self.a * (1.0 + u * u) * self.envelope(z) + self.d
    }

    fn d_u(&self, u: f64, z: &[f64]) -> f64 {
        2.0 * self.a * u * self.envelope(z)
    }

    fn gradient(&self, u: f64, z: &[f64]) -> Vec<f64> {
        let k = self.a * (1.0 + u * u) * self.envelope(z) / (self.c * self.c);
        z.iter().map(|x| -k * x).collect()
    }

    fn hessian(&self, u: f64, z: &[f64]) -> DMatrix<f64> {
        let c2 = self.c * self.c;
        let k = self.a * (1.0 + u * u) * self.envelope(z);
        DMatrix::from_fn(z.len(), z.len(), |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            k * (z[i] * z[j] / (c2 * c2) - delta / c2)
        })
    }
}

/// Addends of the Lagrangian density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LagrangianTerms {
    /// Σ_i β_i W_i Σ_m e^{−ρ_i m} Z_im.
    pub objective: f64,
    pub g: f64,
    pub g_u: f64,
    /// g_Z · μ.
    pub transport: f64,
    /// ½ Σ_ij Σ^{ij} g_{Z_i Z_j}.
    pub curvature: f64,
}

impl LagrangianTerms {
    pub fn total(&self) -> f64 {
        self.objective + self.g + self.g_u + self.transport + self.curvature
    }
}

/// f = Σβ_iW_iu_i + g + g_u + g_Z·μ + ½ΣΣ Σ^{ij} g_{Z_iZ_j}, with Σ = σσᵀ.
///
/// `discounted` holds u_i = Σ_m e^{−ρ_i m}Z_im per player.
pub fn lagrangian_density<G: PenalizationField + ?Sized>(
    u: f64,
    w: &[f64],
    z: &[f64],
    discounted: &[f64],
    beta: &[f64],
    mu: &[f64],
    covariance: &DMatrix<f64>,
    g: &G,
) -> Result<LagrangianTerms, PathIntegralError> {
    let check = |term: &'static str, value: f64| {
        if value.is_finite() {
            Ok(value)
        } else {
            Err(PathIntegralError::NonFinite { term, value })
        }
    };
    let objective = check("objective", compensated_sum((0..w.len()).map(|i| beta[i] * w[i] * discounted[i])))?;
    let gz = g.gradient(u, z);
    let terms = LagrangianTerms {
        objective,
        g: check("g", g.value(u, z))?,
        g_u: check("g_u", g.d_u(u, z))?,
        transport: check("g_Z.mu", gz.iter().zip(mu).map(|(a, b)| a * b).sum())?,
        curvature: check("covariance:g_ZZ", 0.5 * covariance.component_mul(&g.hessian(u, z)).sum())?,
    };
    Ok(terms)
}

/// Ψ and ∂Ψ/∂Z at the current over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionState {
    pub psi: f64,
    pub gradient: Vec<f64>,
    pub over_index: usize,
}

/// A scalar action ξ ↦ f(ξ) with derivatives.
pub trait Action: Sync {
    fn dim(&self) -> usize;
    fn value(&self, xi: &[f64]) -> f64;
    fn gradient(&self, xi: &[f64]) -> Vec<f64>;
    fn hessian(&self, xi: &[f64]) -> DMatrix<f64>;
}

/// f(ξ) = f₀ + b·(ξ − z₀) + ½(ξ − z₀)ᵀΘ(ξ − z₀).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticAction {
    pub f0: f64,
    pub center: Vec<f64>,
    pub linear: Vec<f64>,
    pub hessian: DMatrix<f64>,
}

impl Action for QuadraticAction {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, xi: &[f64]) -> f64 {
        let d = DVector::from_iterator(xi.len(), xi.iter().zip(&self.center).map(|(x, c)| x - c));
        self.f0 + DVector::from_column_slice(&self.linear).dot(&d) + 0.5 * d.dot(&(&self.hessian * &d))
    }

    fn gradient(&self, xi: &[f64]) -> Vec<f64> {
        let d = DVector::from_iterator(xi.len(), xi.iter().zip(&self.center).map(|(x, c)| x - c));
        let g = DVector::from_column_slice(&self.linear) + &self.hessian * d;
        g.iter().copied().collect()
    }

    fn hessian(&self, _xi: &[f64]) -> DMatrix<f64> {
        self.hessian.clone()
    }
}

/// Saddle-point data at an expansion point z₀.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceStep {
    pub center: Vec<f64>,
    pub f0: f64,
    /// Θ = ∇²f(z₀).
    pub theta: DMatrix<f64>,
    /// R = −2∇f(z₀).
    pub r: Vec<f64>,
    pub epsilon: f64,
}

impl LaplaceStep {
    pub fn at<A: Action + ?Sized>(action: &A, center: &[f64], epsilon: f64) -> Self {
        LaplaceStep {
            center: center.to_vec(),
            f0: action.value(center),
            theta: action.hessian(center),
            r: action.gradient(center).iter().map(|g| -2.0 * g).collect(),
            epsilon,
        }
    }

    /// N_u = √((2π)^I / |εΘ|).
    pub fn normalizer(&self) -> Result<f64, PathIntegralError> {
        normalizer(&self.theta, self.epsilon)
    }
}

pub fn normalizer(theta: &DMatrix<f64>, epsilon: f64) -> Result<f64, PathIntegralError> {
    let chol = Cholesky::new(theta.clone()).ok_or(PathIntegralError::NotPositiveDefinite)?;
    let n = theta.nrows() as f64;
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum::<f64>() + n * epsilon.ln();
    Ok((0.5 * (n * (2.0 * std::f64::consts::PI).ln() - log_det)).exp())
}

/// Ψ' = (1 − εf₀ + ½εRᵀΘ⁻¹R)·(Ψ + (z₀ + ½Θ⁻¹R)·∂Ψ/∂Z).
///
/// The gradient is carried forward with the same scalar factor.
pub fn laplace_step(state: &TransitionState, step: &LaplaceStep) -> Result<TransitionState, PathIntegralError> {
    let n = step.center.len();
    if state.gradient.len() != n || step.theta.nrows() != n || step.r.len() != n {
        return Err(PathIntegralError::Shape(format!("expected dimension {n}")));
    }
    let chol = Cholesky::new(step.theta.clone()).ok_or(PathIntegralError::NotPositiveDefinite)?;
    let r = DVector::from_column_slice(&step.r);
    let theta_inv_r = chol.solve(&r);
    let factor = 1.0 - step.epsilon * step.f0 + 0.5 * step.epsilon * r.dot(&theta_inv_r);
    let shift: f64 = (0..n).map(|i| (step.center[i] + 0.5 * theta_inv_r[i]) * state.gradient[i]).sum();
    finish(state, factor, shift)
}

fn finish(state: &TransitionState, factor: f64, shift: f64) -> Result<TransitionState, PathIntegralError> {
    let psi = factor * (state.psi + shift);
    if !(psi > 0.0) {
        return Err(PathIntegralError::NonPositive(psi));
    }
    Ok(TransitionState {
        psi,
        gradient: state.gradient.iter().map(|g| factor * g).collect(),
        over_index: state.over_index + 1,
    })
}

/// Diagnostics of one quadrature step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureReport {
    pub mode: Vec<f64>,
    pub normalizer: f64,
    /// (1/N_u)∫e^{−εf}.
    pub mass: f64,
    /// ∫ξe^{−εf} / ∫e^{−εf}.
    pub mean: Vec<f64>,
    pub boundary_fraction: f64,
    pub nodes: usize,
}

const LEAK_TOL: f64 = 1e-10;

fn find_mode<A: Action + ?Sized>(action: &A, start: &[f64]) -> Result<Vec<f64>, PathIntegralError> {
    let mut x = DVector::from_column_slice(start);
    for _ in 0..100 {
        let xs: Vec<f64> = x.iter().copied().collect();
        let g = DVector::from_vec(action.gradient(&xs));
        let chol = Cholesky::new(action.hessian(&xs)).ok_or(PathIntegralError::NotPositiveDefinite)?;
        let dx = chol.solve(&g);
        x -= &dx;
        if dx.norm() <= 1e-13 * (1.0 + x.norm()) {
            return Ok(x.iter().copied().collect());
        }
    }
    Err(PathIntegralError::ModeSearch)
}

/// Ψ' = N_u⁻¹[Ψ∫e^{−εf(ξ)}dξ + ∂Ψ/∂Z·∫ξe^{−εf(ξ)}dξ] by tensor Gauss–Hermite quadrature.
///
/// The grid is centred at the minimum of f and scaled by the Cholesky factor of (εΘ)⁻¹.
/// Fails if the outermost nodes carry more than 1e-10 of the mass.
pub fn transition_step_quadrature<A: Action + ?Sized>(
    state: &TransitionState,
    action: &A,
    epsilon: f64,
    order: usize,
    executor: &Executor,
) -> Result<(TransitionState, QuadratureReport), PathIntegralError> {
    let n = action.dim();
    if state.gradient.len() != n {
        return Err(PathIntegralError::Shape(format!("gradient has {} components, action {n}", state.gradient.len())));
    }
    let mode = find_mode(action, &vec![0.0; n])?;
    let theta = action.hessian(&mode);
    let norm = normalizer(&theta, epsilon)?;
    let cov = (theta * epsilon).try_inverse().ok_or(PathIntegralError::NotPositiveDefinite)?;
    let l = Cholesky::new(cov).ok_or(PathIntegralError::NotPositiveDefinite)?.l();
    let (x, wts) = gauss_hermite(order);
    // weight·e^{x²} absorbs the Hermite kernel
    let scaled: Vec<f64> = x.iter().zip(&wts).map(|(x, w)| w * (x * x).exp()).collect();
    let jac = std::f64::consts::SQRT_2.powi(n as i32) * l.diagonal().iter().product::<f64>();
    let total = order.pow(n as u32);
    let f_mode = action.value(&mode);

    // per node: [mass, boundary mass, ξ_1..ξ_n weighted]
    let rows = executor.map(total, |idx| {
        let mut rem = idx;
        let mut y = DVector::zeros(n);
        let mut weight = jac;
        let mut outer = false;
        for k in 0..n {
            let j = rem % order;
            rem /= order;
            y[k] = std::f64::consts::SQRT_2 * x[j];
            weight *= scaled[j];
            outer |= j == 0 || j + 1 == order;
        }
        let xi: Vec<f64> = (DVector::from_column_slice(&mode) + &l * y).iter().copied().collect();
        // factor e^{−εf(mode)} out to keep magnitudes near one
        let v = weight * (-epsilon * (action.value(&xi) - f_mode)).exp();
        let mut row = Vec::with_capacity(n + 2);
        row.push(v);
        row.push(if outer { v.abs() } else { 0.0 });
        row.extend(xi.iter().map(|c| c * v));
        row
    });
    let col = |c: usize| compensated_sum(rows.iter().map(|r| r[c]));
    let mass_raw = col(0);
    let boundary_fraction = col(1) / mass_raw.abs();
    if !(boundary_fraction < LEAK_TOL) {
        return Err(PathIntegralError::BoundaryLeak { fraction: boundary_fraction });
    }
    let mean: Vec<f64> = (0..n).map(|k| col(k + 2) / mass_raw).collect();
    let mass = mass_raw * (-epsilon * f_mode).exp() / norm;
    let shift: f64 = mean.iter().zip(&state.gradient).map(|(m, g)| m * g).sum();
    let next = finish(state, mass, shift)?;
    Ok((next, QuadratureReport { mode, normalizer: norm, mass, mean, boundary_fraction, nodes: total }))
}

/// Derivative inputs of the first-order condition at (u, Z, W).
#[derive(Debug, Clone, PartialEq)]
pub struct FocInputs {
    /// u_i = Σ_m e^{−ρ_i m}Z_im; D is their sum.
    pub discounted: Vec<f64>,
    /// ∂g/∂Z_j.
    pub g_z: Vec<f64>,
    /// ∂²g/∂Z_j∂Z_k.
    pub g_zz: DMatrix<f64>,
    /// (j, l) entry ∂μ_j/∂W_l.
    pub drift_jacobian: DMatrix<f64>,
    /// Entry l is ∂Σ/∂W_l with Σ = σσᵀ.
    pub covariance_sensitivity: Vec<DMatrix<f64>>,
    /// (l, i) entry ∂W_l/∂W_i; the identity unless valuations are coupled.
    pub coupling: DMatrix<f64>,
}

impl FocInputs {
    pub fn dim(&self) -> usize {
        self.g_z.len()
    }

    pub fn denominator(&self) -> f64 {
        compensated_sum(self.discounted.iter().copied())
    }

    fn check(&self) -> Result<(), PathIntegralError> {
        let n = self.dim();
        let ok = self.g_zz.shape() == (n, n)
            && self.drift_jacobian.nrows() == n
            && self.coupling.nrows() == self.drift_jacobian.ncols()
            && self.covariance_sensitivity.len() == self.drift_jacobian.ncols()
            && self.covariance_sensitivity.iter().all(|m| m.shape() == (n, n));
        if ok {
            Ok(())
        } else {
            Err(PathIntegralError::Shape("first-order condition inputs disagree in size".into()))
        }
    }

    /// g_Z·(∂μ/∂W)(∂W/∂W_i) + ½ΣΣ(∂Σ/∂W·∂W/∂W_i)_{jk} g_{Z_jZ_k}.
    pub fn bracket(&self, i: usize) -> f64 {
        let mut first = 0.0;
        let mut second = 0.0;
        for l in 0..self.coupling.nrows() {
            let c = self.coupling[(l, i)];
            if c == 0.0 {
                continue;
            }
            let col: f64 = (0..self.dim()).map(|j| self.g_z[j] * self.drift_jacobian[(j, l)]).sum();
            first += col * c;
            second += 0.5 * c * self.covariance_sensitivity[l].component_mul(&self.g_zz).sum();
        }
        first + second
    }
}

/// The first-order condition β·D + bracket_i for player i.
pub fn first_order_condition(beta: f64, inputs: &FocInputs, i: usize) -> Result<f64, PathIntegralError> {
    inputs.check()?;
    Ok(beta * inputs.denominator() + inputs.bracket(i))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaStar {
    pub denominator: f64,
    /// β*_i per player.
    pub beta: Vec<f64>,
    pub brackets: Vec<f64>,
    /// First-order residual at β*_i.
    pub residuals: Vec<f64>,
}

/// β*_i = −bracket_i / D.
pub fn beta_star(inputs: &FocInputs) -> Result<BetaStar, PathIntegralError> {
    inputs.check()?;
    let d = inputs.denominator();
    if d == 0.0 || !d.is_finite() {
        return Err(PathIntegralError::DegenerateDenominator(d));
    }
    let n = inputs.coupling.ncols();
    let brackets: Vec<f64> = (0..n).map(|i| inputs.bracket(i)).collect();
    let beta: Vec<f64> = brackets.iter().map(|b| -b / d + 0.0).collect();
    let residuals = beta.iter().zip(&brackets).map(|(b, br)| b * d + br).collect();
    Ok(BetaStar { denominator: d, beta, brackets, residuals })
}

/// Drift and diagonal diffusion as functions of the valuations.
pub trait ValuationModel {
    fn drift_w(&self, u: f64, w: &[f64], z: &[f64]) -> Result<Vec<f64>, PathIntegralError>;
    fn sigma_w(&self, u: f64, w: &[f64], z: &[f64]) -> Result<Vec<f64>, PathIntegralError>;
}

impl ValuationModel for crate::dynamics::MatchDynamics {
    fn drift_w(&self, u: f64, w: &[f64], z: &[f64]) -> Result<Vec<f64>, PathIntegralError> {
        Ok(self.drift_with(u, w, z, &vec![0.0; z.len()])?)
    }

    fn sigma_w(&self, u: f64, w: &[f64], z: &[f64]) -> Result<Vec<f64>, PathIntegralError> {
        Ok(self.sigma_with(u, w, z)?)
    }
}

/// Central-difference ∂μ/∂W and ∂(σσᵀ)/∂W of a valuation model at (u, W, Z).
pub fn valuation_sensitivities<M: ValuationModel + ?Sized>(
    model: &M,
    u: f64,
    w: &[f64],
    z: &[f64],
) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>), PathIntegralError> {
    let n = z.len();
    let m = w.len();
    let mut jac = DMatrix::zeros(n, m);
    let mut sens = Vec::with_capacity(m);
    let mut wp = w.to_vec();
    for l in 0..m {
        let h = 1e-5 * (1.0 + w[l].abs());
        wp[l] = w[l] + h;
        let (mu_up, s_up) = (model.drift_w(u, &wp, z)?, model.sigma_w(u, &wp, z)?);
        wp[l] = w[l] - h;
        let (mu_dn, s_dn) = (model.drift_w(u, &wp, z)?, model.sigma_w(u, &wp, z)?);
        wp[l] = w[l];
        for j in 0..n {
            jac[(j, l)] = (mu_up[j] - mu_dn[j]) / (2.0 * h);
        }
        sens.push(DMatrix::from_fn(n, n, |j, k| {
            if j == k {
                (s_up[j] * s_up[j] - s_dn[j] * s_dn[j]) / (2.0 * h)
            } else {
                0.0
            }
        }));
    }
    Ok((jac, sens))
}
