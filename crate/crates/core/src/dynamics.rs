//! The run SDE: generator and log-generator, drift composition, an Euler–Maruyama ensemble
//! integrator and Monte Carlo checks of the Dynkin identity and the martingale property.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bowler::BowlerError;
use crate::environment::{self, Sigma1Terms};
use crate::model::{check_non_negative, check_positive, check_range, ConfigError, MatchConfig};
use crate::montecarlo::{path_rng, Executor, PathRng};
use crate::stats::{compensated_sum, linear_fit, Estimate, Moments};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("test function vanishes at z (h = 0); log-generator undefined")]
    ZeroTestFunction,
    #[error("log-generator argument 1 + Ah/h <= 0 (Ah = {ah}, h = {h})")]
    LogDomain { ah: f64, h: f64 },
    #[error("non-finite derivative of the test function at z")]
    NonFiniteDerivative,
    #[error("drift growth bound violated: |mu~| = {magnitude} > {bound}")]
    GrowthBound { magnitude: f64, bound: f64 },
    #[error("path {path} left the finite range at over {over}")]
    NonFinite { path: usize, over: f64 },
    #[error("invalid simulation setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Environment(#[from] environment::EnvironmentError),
    #[error(transparent)]
    Bowler(#[from] BowlerError),
}

const FD_STEP: f64 = 1e-5;

/// Smooth scalar test function h over run space.
///
/// The derivative methods default to central finite differences.
pub trait ScalarField: Sync {
    fn value(&self, z: &[f64]) -> f64;

    fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let mut x = z.to_vec();
        (0..z.len())
            .map(|i| {
                x[i] = z[i] + FD_STEP;
                let up = self.value(&x);
                x[i] = z[i] - FD_STEP;
                let down = self.value(&x);
                x[i] = z[i];
                (up - down) / (2.0 * FD_STEP)
            })
            .collect()
    }

    fn hessian(&self, z: &[f64]) -> DMatrix<f64> {
        let n = z.len();
        let mut x = z.to_vec();
        let h = 1e-4;
        let f0 = self.value(z);
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                x[i] = z[i] + h;
                let up = self.value(&x);
                x[i] = z[i] - h;
                let down = self.value(&x);
                x[i] = z[i];
                (up - 2.0 * f0 + down) / (h * h)
            } else {
                let mut eval = |si: f64, sj: f64| {
                    x[i] = z[i] + si * h;
                    x[j] = z[j] + sj * h;
                    let v = self.value(&x);
                    x[i] = z[i];
                    x[j] = z[j];
                    v
                };
                (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * h * h)
            }
        })
    }

    /// Diagonal of the Hessian; all a diagonal diffusion needs.
    fn hessian_diag(&self, z: &[f64]) -> Vec<f64> {
        self.hessian(z).diagonal().iter().copied().collect()
    }
}

/// Closed-form test functions with analytic derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// h ≡ c.
    Constant { c: f64 },
    /// h = c₀ + Σ cᵢ zᵢ.
    Linear { intercept: f64, coeffs: Vec<f64> },
    /// h = offset + ‖z‖².
    Quadratic { offset: f64 },
    /// h = offset + cos z₁.
    Cosine { offset: f64 },
    /// h = offset + exp(−‖z‖²/(2w²)).
    GaussianBump { offset: f64, width: f64 },
}

impl Default for TestFunction {
    fn default() -> Self {
        TestFunction::Constant { c: 1.0 }
    }
}

impl ScalarField for TestFunction {
    fn value(&self, z: &[f64]) -> f64 {
        match self {
            TestFunction::Constant { c } => *c,
            TestFunction::Linear { intercept, coeffs } => {
                intercept + coeffs.iter().zip(z).map(|(c, x)| c * x).sum::<f64>()
            }
            TestFunction::Quadratic { offset } => offset + z.iter().map(|x| x * x).sum::<f64>(),
            TestFunction::Cosine { offset } => offset + z[0].cos(),
            TestFunction::GaussianBump { offset, width } => {
                offset + (-z.iter().map(|x| x * x).sum::<f64>() / (2.0 * width * width)).exp()
            }
        }
    }

    fn gradient(&self, z: &[f64]) -> Vec<f64> {
        match self {
            TestFunction::Constant { .. } => vec![0.0; z.len()],
            TestFunction::Linear { coeffs, .. } => {
                (0..z.len()).map(|i| coeffs.get(i).copied().unwrap_or(0.0)).collect()
            }
            TestFunction::Quadratic { .. } => z.iter().map(|x| 2.0 * x).collect(),
            TestFunction::Cosine { .. } => {
                let mut g = vec![0.0; z.len()];
                g[0] = -z[0].sin();
                g
            }
            TestFunction::GaussianBump { width, .. } => {
                let w2 = width * width;
                let e = (-z.iter().map(|x| x * x).sum::<f64>() / (2.0 * w2)).exp();
                z.iter().map(|x| -x / w2 * e).collect()
            }
        }
    }

    fn hessian(&self, z: &[f64]) -> DMatrix<f64> {
        let n = z.len();
        match self {
            TestFunction::Constant { .. } | TestFunction::Linear { .. } => DMatrix::zeros(n, n),
            TestFunction::Quadratic { .. } => DMatrix::identity(n, n) * 2.0,
            TestFunction::Cosine { .. } => {
                let mut h = DMatrix::zeros(n, n);
                h[(0, 0)] = -z[0].cos();
                h
            }
            TestFunction::GaussianBump { width, .. } => {
                let w2 = width * width;
                let e = (-z.iter().map(|x| x * x).sum::<f64>() / (2.0 * w2)).exp();
                DMatrix::from_fn(n, n, |i, j| {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    e * (z[i] * z[j] / (w2 * w2) - delta / w2)
                })
            }
        }
    }

    fn hessian_diag(&self, z: &[f64]) -> Vec<f64> {
        let n = z.len();
        match self {
            TestFunction::Constant { .. } | TestFunction::Linear { .. } => vec![0.0; n],
            TestFunction::Quadratic { .. } => vec![2.0; n],
            TestFunction::Cosine { .. } => {
                let mut d = vec![0.0; n];
                d[0] = -z[0].cos();
                d
            }
            TestFunction::GaussianBump { width, .. } => {
                let w2 = width * width;
                let e = (-z.iter().map(|x| x * x).sum::<f64>() / (2.0 * w2)).exp();
                z.iter().map(|x| e * (x * x / (w2 * w2) - 1.0 / w2)).collect()
            }
        }
    }
}

/// Wraps a closure as a [`ScalarField`] with finite-difference derivatives.
pub struct FnField<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Sync> ScalarField for FnField<F> {
    fn value(&self, z: &[f64]) -> f64 {
        (self.0)(z)
    }
}

/// Ah = μ·∇h + ½ tr(σσᵀ ∇²h) for a full I×p diffusion matrix.
pub fn generator_a<H: ScalarField + ?Sized>(
    h: &H,
    z: &[f64],
    mu: &[f64],
    sigma: &DMatrix<f64>,
) -> Result<f64, DynamicsError> {
    let grad = h.gradient(z);
    let hess = h.hessian(z);
    let cov = sigma * sigma.transpose();
    let first: f64 = mu.iter().zip(&grad).map(|(m, g)| m * g).sum();
    let second = 0.5 * cov.component_mul(&hess).sum();
    let v = first + second;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DynamicsError::NonFiniteDerivative)
    }
}

/// Generator for a diagonal diffusion σ = diag(sigma).
pub fn generator_diag<H: ScalarField + ?Sized>(
    h: &H,
    z: &[f64],
    mu: &[f64],
    sigma: &[f64],
) -> Result<f64, DynamicsError> {
    let grad = h.gradient(z);
    let hess = h.hessian_diag(z);
    let first: f64 = mu.iter().zip(&grad).map(|(m, g)| m * g).sum();
    let second: f64 = sigma.iter().zip(&hess).map(|(s, d)| 0.5 * s * s * d).sum();
    let v = first + second;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DynamicsError::NonFiniteDerivative)
    }
}

/// 𝒜h = ln(1 + Ah/h) from a precomputed generator value.
pub fn log_generator(ah: f64, h: f64) -> Result<f64, DynamicsError> {
    if h == 0.0 {
        return Err(DynamicsError::ZeroTestFunction);
    }
    let ratio = ah / h;
    if ratio <= -1.0 || !ratio.is_finite() {
        return Err(DynamicsError::LogDomain { ah, h });
    }
    Ok(ratio.ln_1p())
}

/// 𝒜h(z) = ln(1 + Ah(z)/h(z)).
pub fn quantum_operator<H: ScalarField + ?Sized>(
    h: &H,
    z: &[f64],
    mu: &[f64],
    sigma: &DMatrix<f64>,
) -> Result<f64, DynamicsError> {
    let hz = h.value(z);
    if hz == 0.0 {
        return Err(DynamicsError::ZeroTestFunction);
    }
    log_generator(generator_a(h, z, mu, sigma)?, hz)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftParams {
    /// Baseline scoring rate per player per over.
    pub offset: f64,
    /// Sensitivity of μ̃ to the valuation W.
    pub valuation_coupling: f64,
    /// Sensitivity of μ̃ to the ensemble mean.
    pub meanfield_coupling: f64,
    /// Lipschitz constant k₁ in W.
    pub lipschitz_w: f64,
    /// Lipschitz constant k₂ in Z.
    pub lipschitz_z: f64,
    /// Growth constant l.
    pub growth: f64,
    pub test_function: TestFunction,
}

impl Default for DriftParams {
    fn default() -> Self {
        DriftParams {
            offset: 0.45,
            valuation_coupling: 0.04,
            meanfield_coupling: 0.0,
            lipschitz_w: 0.1,
            lipschitz_z: 0.1,
            growth: 1.0,
            test_function: TestFunction::default(),
        }
    }
}

impl DriftParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_range("drift.offset", self.offset, f64::MIN, f64::MAX, true, true)?;
        check_positive("drift.lipschitz_w", self.lipschitz_w)?;
        check_positive("drift.lipschitz_z", self.lipschitz_z)?;
        check_positive("drift.growth", self.growth)?;
        if self.valuation_coupling.abs() > self.lipschitz_w || !self.valuation_coupling.is_finite() {
            return Err(ConfigError::invalid(
                "drift.valuation_coupling",
                self.valuation_coupling,
                "exceeds the Lipschitz constant lipschitz_w",
            ));
        }
        check_range("drift.meanfield_coupling", self.meanfield_coupling, f64::MIN, f64::MAX, true, true)?;
        if let TestFunction::GaussianBump { width, .. } = self.test_function {
            check_positive("drift.test_function.width", width)?;
        }
        Ok(())
    }

    /// μ̃_i = offset + valuation_coupling·W_i + meanfield_coupling·𝔼Z_i.
    pub fn mu_tilde(&self, w: &[f64], ensemble_mean: &[f64]) -> Vec<f64> {
        w.iter()
            .enumerate()
            .map(|(i, wi)| {
                let m = ensemble_mean.get(i).copied().unwrap_or(0.0);
                self.offset + self.valuation_coupling * wi + self.meanfield_coupling * m
            })
            .collect()
    }

    /// l(1 + ‖W‖ + ‖Z‖ + ‖f‖_γ) with ‖f‖_γ approximated by 1 + ‖𝔼Z‖.
    pub fn growth_bound(&self, w: &[f64], z: &[f64], ensemble_mean: &[f64]) -> f64 {
        self.growth * (2.0 + norm(w) + norm(z) + norm(ensemble_mean))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// μ = 𝒜h(z)·1 + μ̃, with 𝒜h evaluated using μ̂ = μ̃ and the diagonal diffusion `sigma`.
pub fn compose_drift(
    w: &[f64],
    z: &[f64],
    ensemble_mean: &[f64],
    sigma: &[f64],
    spec: &DriftParams,
) -> Result<Vec<f64>, DynamicsError> {
    let mu_tilde = spec.mu_tilde(w, ensemble_mean);
    let magnitude = norm(&mu_tilde);
    let bound = spec.growth_bound(w, z, ensemble_mean);
    if magnitude > bound {
        return Err(DynamicsError::GrowthBound { magnitude, bound });
    }
    let ah = match &spec.test_function {
        TestFunction::Constant { c } if *c != 0.0 => 0.0,
        h => {
            let g = generator_diag(h, z, &mu_tilde, sigma)?;
            log_generator(g, h.value(z))?
        }
    };
    Ok(mu_tilde.into_iter().map(|m| m + ah).collect())
}

/// Coefficients of an SDE with diagonal diffusion and one noise channel per component.
pub trait SdeModel: Sync {
    fn dim(&self) -> usize;
    fn drift(&self, u: f64, z: &[f64], ensemble_mean: &[f64], out: &mut [f64]) -> Result<(), DynamicsError>;
    fn diffusion(&self, u: f64, z: &[f64], out: &mut [f64]) -> Result<(), DynamicsError>;
    /// Whether `drift` reads the ensemble mean.
    fn mean_field(&self) -> bool {
        false
    }
}

/// μ_i = intercept_i + slope_i·z_i, σ_i constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineSde {
    pub intercept: Vec<f64>,
    pub slope: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl AffineSde {
    pub fn constant(mu: Vec<f64>, sigma: Vec<f64>) -> Self {
        let n = mu.len();
        AffineSde { intercept: mu, slope: vec![0.0; n], sigma }
    }

    pub fn linear(lambda: f64, sigma: f64) -> Self {
        AffineSde { intercept: vec![0.0], slope: vec![lambda], sigma: vec![sigma] }
    }
}

impl SdeModel for AffineSde {
    fn dim(&self) -> usize {
        self.intercept.len()
    }

    fn drift(&self, _u: f64, z: &[f64], _mean: &[f64], out: &mut [f64]) -> Result<(), DynamicsError> {
        for i in 0..out.len() {
            out[i] = self.intercept[i] + self.slope[i] * z[i];
        }
        Ok(())
    }

    fn diffusion(&self, _u: f64, _z: &[f64], out: &mut [f64]) -> Result<(), DynamicsError> {
        out.copy_from_slice(&self.sigma);
        Ok(())
    }
}

/// Which players bat at over `u` under a deterministic wicket schedule.
///
/// Players 1 and 2 open; wicket k dismisses the lower-numbered batsman at the crease and
/// brings in player k + 3.
pub fn on_field(u: f64, wicket_schedule: &[f64], players: usize) -> Vec<bool> {
    let mut crease = [0usize, 1usize];
    for (k, &w) in wicket_schedule.iter().enumerate() {
        if u < w {
            break;
        }
        let out = if crease[0] < crease[1] { 0 } else { 1 };
        crease[out] = k + 2;
    }
    (0..players).map(|i| crease.contains(&i)).collect()
}

/// Match coefficients assembled from a configuration.
///
/// Drift follows [`compose_drift`]; the diffusion is diagonal with
/// σ_i = scale·(σ₁_i + σ₂*), σ₁ composed from pressure, attendance, 𝔅 and weather.
#[derive(Debug, Clone)]
pub struct MatchDynamics {
    config: MatchConfig,
    valuations: Vec<f64>,
    sigma2_star: f64,
    day_night: f64,
    weather_step: f64,
    weather: Vec<f64>,
}

impl MatchDynamics {
    pub fn new(config: &MatchConfig) -> Result<Self, DynamicsError> {
        let bowler = config.bowler.summary(config.total_overs)?;
        let day_night = environment::day_night_effect(&config.environment.day_night, config.environment.day_night.toss);
        let step = config.simulation.step;
        let n = (config.total_overs / step).ceil() as usize + 1;
        let weather =
            (0..=n).map(|k| environment::weierstrass_weather(k as f64 * step, &config.environment.weather)).collect();
        Ok(MatchDynamics {
            config: config.clone(),
            valuations: config.valuations(),
            sigma2_star: bowler.sigma2_star,
            day_night,
            weather_step: step,
            weather,
        })
    }

    pub fn with_valuations(mut self, w: Vec<f64>) -> Self {
        self.valuations = w;
        self
    }

    pub fn sigma2_star(&self) -> f64 {
        self.sigma2_star
    }

    pub fn config(&self) -> &MatchConfig {
        &self.config
    }

    fn weather_at(&self, u: f64) -> f64 {
        let k = (u / self.weather_step).round();
        if (k * self.weather_step - u).abs() < 1e-9 && (k as usize) < self.weather.len() && k >= 0.0 {
            self.weather[k as usize]
        } else {
            environment::weierstrass_weather(u, &self.config.environment.weather)
        }
    }

    /// σ₁ at (u, W, Z).
    pub fn sigma1(&self, u: f64, w: &[f64], z: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        let env = &self.config.environment;
        let expected = vec![env.pressure.expected_rate * u; z.len()];
        let field = on_field(u, &self.config.simulation.wicket_schedule, z.len());
        let terms = Sigma1Terms {
            pressure: environment::pressure(z, &expected, &env.pressure),
            attendance: environment::attendance(u, w, &field, &env.attendance),
            day_night: self.day_night,
            weather: self.weather_at(u),
        };
        Ok(environment::sigma1(&terms, env.correlations)?)
    }

    /// Diagonal of σ at (u, W, Z) for arbitrary valuations.
    pub fn sigma_with(&self, u: f64, w: &[f64], z: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        let scale = self.config.environment.diffusion_scale;
        Ok(self.sigma1(u, w, z)?.into_iter().map(|s| scale * (s + self.sigma2_star)).collect())
    }

    /// Drift at (u, W, Z) for arbitrary valuations.
    pub fn drift_with(&self, u: f64, w: &[f64], z: &[f64], mean: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        let sigma = self.sigma_with(u, w, z)?;
        compose_drift(w, z, mean, &sigma, &self.config.drift)
    }
}

impl SdeModel for MatchDynamics {
    fn dim(&self) -> usize {
        self.valuations.len()
    }

    fn drift(&self, u: f64, z: &[f64], mean: &[f64], out: &mut [f64]) -> Result<(), DynamicsError> {
        out.copy_from_slice(&self.drift_with(u, &self.valuations, z, mean)?);
        Ok(())
    }

    fn diffusion(&self, u: f64, z: &[f64], out: &mut [f64]) -> Result<(), DynamicsError> {
        out.copy_from_slice(&self.sigma_with(u, &self.valuations, z)?);
        Ok(())
    }

    fn mean_field(&self) -> bool {
        self.config.drift.meanfield_coupling != 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Runs cannot go negative: each component is floored at zero after every step.
    Floor,
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub start: f64,
    pub end: f64,
    /// Largest admissible step; the grid is uniform with step ≤ this.
    pub max_step: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub boundary: Boundary,
    /// Number of leading paths whose full trajectory is kept.
    pub record: usize,
}

impl SimulationSpec {
    pub fn grid(&self) -> Vec<f64> {
        let n = ((self.end - self.start) / self.max_step - 1e-9).ceil().max(1.0) as usize;
        let du = (self.end - self.start) / n as f64;
        (0..=n).map(|k| if k == n { self.end } else { self.start + k as f64 * du }).collect()
    }
}

/// One recorded trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SdePath {
    pub path_id: usize,
    pub seed: u64,
    pub values: Vec<Vec<f64>>,
    pub increments: Vec<Vec<f64>>,
}

/// Per-step callback accumulating path functionals.
pub trait Observer: Sync {
    fn width(&self) -> usize;
    /// Accumulator values before the first step.
    fn initial(&self) -> Vec<f64> {
        vec![0.0; self.width()]
    }
    #[allow(clippy::too_many_arguments)]
    fn observe(
        &self,
        u: f64,
        du: f64,
        before: &[f64],
        after: &[f64],
        db: &[f64],
        acc: &mut [f64],
    ) -> Result<(), DynamicsError>;
}

pub struct NoObserver;

impl Observer for NoObserver {
    fn width(&self) -> usize {
        0
    }
    fn observe(&self, _: f64, _: f64, _: &[f64], _: &[f64], _: &[f64], _: &mut [f64]) -> Result<(), DynamicsError> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathEnsemble {
    pub grid: Vec<f64>,
    /// Terminal values, one row per path.
    pub terminal: Vec<Vec<f64>>,
    /// Observer accumulators, one row per path.
    pub accumulators: Vec<Vec<f64>>,
    pub recorded: Vec<SdePath>,
}

impl PathEnsemble {
    /// Sample of component `i` at the terminal over.
    pub fn terminal_component(&self, i: usize) -> Vec<f64> {
        self.terminal.iter().map(|z| z[i]).collect()
    }

    pub fn terminal_totals(&self) -> Vec<f64> {
        self.terminal.iter().map(|z| compensated_sum(z.iter().copied())).collect()
    }
}

struct PathState {
    z: Vec<f64>,
    rng: PathRng,
    acc: Vec<f64>,
    values: Vec<Vec<f64>>,
    increments: Vec<Vec<f64>>,
    /// μ, σ, ΔB and the next state, reused across steps.
    scratch: Vec<f64>,
    failed: Option<DynamicsError>,
}

/// Euler–Maruyama over `spec.grid()` from `z0` for every path in lockstep.
///
/// Path i uses the stream derived from `(spec.seed, i)`. The ensemble mean handed to
/// mean-field models is reduced in path order, so results do not depend on the executor.
pub fn simulate_paths<M: SdeModel + ?Sized, O: Observer>(
    model: &M,
    z0: &[f64],
    spec: &SimulationSpec,
    observer: &O,
    executor: &Executor,
) -> Result<PathEnsemble, DynamicsError> {
    if spec.n_paths == 0 {
        return Err(DynamicsError::Setup("n_paths must be at least 1".into()));
    }
    if !(spec.max_step > 0.0) || !(spec.end >= spec.start) {
        return Err(DynamicsError::Setup(format!(
            "need start <= end and a positive step, got [{}, {}] step {}",
            spec.start, spec.end, spec.max_step
        )));
    }
    let dim = model.dim();
    if z0.len() != dim {
        return Err(DynamicsError::Setup(format!("initial state has {} components, model has {dim}", z0.len())));
    }
    let grid = spec.grid();
    let mut states: Vec<PathState> = (0..spec.n_paths)
        .map(|i| PathState {
            z: z0.to_vec(),
            rng: path_rng(spec.seed, i as u64),
            acc: observer.initial(),
            scratch: vec![0.0; 4 * z0.len()],
            values: if i < spec.record { vec![z0.to_vec()] } else { Vec::new() },
            increments: Vec::new(),
            failed: None,
        })
        .collect();
    let mut mean = z0.to_vec();
    for step in grid.windows(2) {
        let (u, du) = (step[0], step[1] - step[0]);
        if model.mean_field() {
            for (j, m) in mean.iter_mut().enumerate() {
                *m = compensated_sum(states.iter().map(|s| s.z[j])) / spec.n_paths as f64;
            }
        }
        let mean = &mean;
        executor.for_each_mut(&mut states, |i, st| {
            if st.failed.is_some() {
                return;
            }
            if let Err(e) = euler_step(model, observer, spec, i, u, du, mean, st) {
                st.failed = Some(e);
            }
        });
        if let Some(st) = states.iter_mut().find(|s| s.failed.is_some()) {
            return Err(st.failed.take().expect("failure present"));
        }
    }
    let mut ensemble = PathEnsemble {
        grid,
        terminal: Vec::with_capacity(spec.n_paths),
        accumulators: Vec::with_capacity(spec.n_paths),
        recorded: Vec::new(),
    };
    for (i, st) in states.into_iter().enumerate() {
        if i < spec.record {
            ensemble.recorded.push(SdePath {
                path_id: i,
                seed: crate::montecarlo::derive_seed(spec.seed, i as u64),
                values: st.values,
                increments: st.increments,
            });
        }
        ensemble.terminal.push(st.z);
        ensemble.accumulators.push(st.acc);
    }
    Ok(ensemble)
}

#[allow(clippy::too_many_arguments)]
fn euler_step<M: SdeModel + ?Sized, O: Observer>(
    model: &M,
    observer: &O,
    spec: &SimulationSpec,
    path: usize,
    u: f64,
    du: f64,
    mean: &[f64],
    st: &mut PathState,
) -> Result<(), DynamicsError> {
    let dim = st.z.len();
    let (mu, rest) = st.scratch.split_at_mut(dim);
    let (sigma, rest) = rest.split_at_mut(dim);
    let (db, next) = rest.split_at_mut(dim);
    model.drift(u, &st.z, mean, mu)?;
    model.diffusion(u, &st.z, sigma)?;
    let sq = du.sqrt();
    for (i, b) in db.iter_mut().enumerate() {
        *b = sq * st.rng.sample::<f64, _>(StandardNormal);
        next[i] = st.z[i] + mu[i] * du + sigma[i] * *b;
    }
    if spec.boundary == Boundary::Floor {
        next.iter_mut().for_each(|x| *x = x.max(0.0));
    }
    if next.iter().any(|x| !x.is_finite()) {
        return Err(DynamicsError::NonFinite { path, over: u + du });
    }
    observer.observe(u, du, &st.z, next, db, &mut st.acc)?;
    if !st.values.is_empty() {
        st.values.push(next.to_vec());
        st.increments.push(db.to_vec());
    }
    st.z.copy_from_slice(next);
    Ok(())
}

/// Bounded integrand used in the martingale check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundedIntegrand {
    Tanh,
    Cos,
}

impl BoundedIntegrand {
    fn eval(self, x: f64) -> f64 {
        match self {
            BoundedIntegrand::Tanh => x.tanh(),
            BoundedIntegrand::Cos => x.cos(),
        }
    }
}

struct DynkinObserver<'a, M: ?Sized, H> {
    model: &'a M,
    h: &'a H,
    k: BoundedIntegrand,
}

impl<M: SdeModel + ?Sized, H: ScalarField> DynkinObserver<'_, M, H> {
    fn ah(&self, u: f64, z: &[f64]) -> Result<f64, DynamicsError> {
        let n = z.len();
        let mut buf = vec![0.0; 3 * n];
        let (mean, rest) = buf.split_at_mut(n);
        let (mu, sigma) = rest.split_at_mut(n);
        self.model.drift(u, z, mean, mu)?;
        self.model.diffusion(u, z, sigma)?;
        generator_diag(self.h, z, mu, sigma)
    }
}

/// Slot holding Ah at the end of the previous step, NaN before the first step.
const CARRIED_AH: usize = 3;

impl<M: SdeModel + ?Sized, H: ScalarField> Observer for DynkinObserver<'_, M, H> {
    fn width(&self) -> usize {
        4
    }

    fn initial(&self) -> Vec<f64> {
        vec![0.0, 0.0, 0.0, f64::NAN]
    }

    fn observe(
        &self,
        u: f64,
        du: f64,
        before: &[f64],
        after: &[f64],
        db: &[f64],
        acc: &mut [f64],
    ) -> Result<(), DynamicsError> {
        let carried = acc[CARRIED_AH];
        let a0 = if carried.is_nan() { self.ah(u, before)? } else { carried };
        let a1 = self.ah(u + du, after)?;
        acc[CARRIED_AH] = a1;
        let v = u + du;
        acc[0] += 0.5 * du * (a0 + a1);
        acc[1] += 0.5 * du * (u * u * a0 + v * v * a1);
        acc[2] += before.iter().zip(db).map(|(z, b)| self.k.eval(*z) * b).sum::<f64>();
        Ok(())
    }
}

/// Log form log 𝔼[ν̃²h(Z_ν̃)] against log[ν²h(Z_ν)] + log[1 + 𝔼∫u²Ah du/(ν²h(Z_ν))].
///
/// Reported only; the two sides need not agree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedDynkin {
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynkinReport {
    pub name: String,
    /// 𝔼 h(Z_ν̃).
    pub lhs: Estimate,
    /// h(Z_ν) + 𝔼∫Ah du.
    pub rhs: Estimate,
    /// Per-path defect h(Z_ν̃) − h(Z_ν) − ∫Ah du.
    pub defect: Estimate,
    pub passed: bool,
    pub weighted: Option<WeightedDynkin>,
    /// 𝔼 Σ K(Z) ΔB.
    pub martingale: Estimate,
    pub martingale_passed: bool,
}

/// Gate for Monte Carlo checks: |estimate − target| within `n_se` standard errors.
///
/// A vanishing SE (deterministic dynamics) falls back to a 1e-12 absolute band.
pub fn within_se(e: &Estimate, target: f64, n_se: f64) -> bool {
    let diff = (e.value - target).abs();
    match e.se {
        Some(se) => diff <= n_se * se + 1e-12,
        None => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynkinSetup {
    pub start: f64,
    pub end: f64,
    pub step: f64,
    pub n_paths: usize,
    pub seed: u64,
}

/// Monte Carlo check of 𝔼h(Z_ν̃) = h(Z_ν) + 𝔼∫Ah du and 𝔼∫K dB = 0.
pub fn dynkin_check<M: SdeModel + ?Sized, H: ScalarField>(
    name: &str,
    h: &H,
    model: &M,
    z_nu: &[f64],
    setup: &DynkinSetup,
    integrand: BoundedIntegrand,
    executor: &Executor,
) -> Result<DynkinReport, DynamicsError> {
    let h0 = h.value(z_nu);
    if h0 == 0.0 {
        return Err(DynamicsError::ZeroTestFunction);
    }
    let spec = SimulationSpec {
        start: setup.start,
        end: setup.end,
        max_step: setup.step,
        n_paths: setup.n_paths,
        seed: setup.seed,
        boundary: Boundary::Free,
        record: 0,
    };
    let obs = DynkinObserver { model, h, k: integrand };
    let ens = simulate_paths(model, z_nu, &spec, &obs, executor)?;
    let h_end: Vec<f64> = ens.terminal.iter().map(|z| h.value(z)).collect();
    let rhs_samples: Vec<f64> = ens.accumulators.iter().map(|a| h0 + a[0]).collect();
    let defects: Vec<f64> = h_end.iter().zip(&rhs_samples).map(|(l, r)| l - r).collect();
    let weighted_int: Vec<f64> = ens.accumulators.iter().map(|a| a[1]).collect();
    let mart: Vec<f64> = ens.accumulators.iter().map(|a| a[2]).collect();

    let lhs = Moments::of(&h_end).mean_estimate();
    let rhs = Moments::of(&rhs_samples).mean_estimate();
    let defect = Moments::of(&defects).mean_estimate();
    let martingale = Moments::of(&mart).mean_estimate();

    let (nu, nu_t) = (setup.start, setup.end);
    let base = nu * nu * h0;
    let arg = 1.0 + Moments::of(&weighted_int).mean / base;
    let weighted = (base > 0.0 && arg > 0.0 && lhs.value > 0.0)
        .then(|| WeightedDynkin { lhs: (nu_t * nu_t * lhs.value).ln(), rhs: base.ln() + arg.ln() });
    Ok(DynkinReport {
        name: name.to_string(),
        lhs,
        rhs,
        passed: within_se(&defect, 0.0, 3.0),
        defect,
        weighted,
        martingale_passed: within_se(&martingale, 0.0, 3.0),
        martingale,
    })
}

/// A named (h, μ, σ) triple with its starting point and interval.
pub struct DynkinCase {
    pub name: &'static str,
    pub h: TestFunction,
    pub model: AffineSde,
    pub z_nu: Vec<f64>,
    pub interval: (f64, f64),
    pub integrand: BoundedIntegrand,
}

/// The five canonical triples of the validation suite.
pub fn canonical_dynkin_cases() -> Vec<DynkinCase> {
    vec![
        DynkinCase {
            name: "quadratic h, pure Brownian motion",
            h: TestFunction::Quadratic { offset: 1.0 },
            model: AffineSde::constant(vec![0.0], vec![1.0]),
            z_nu: vec![0.0],
            interval: (1.0, 2.0),
            integrand: BoundedIntegrand::Tanh,
        },
        DynkinCase {
            name: "linear h, constant drift",
            h: TestFunction::Linear { intercept: 2.0, coeffs: vec![1.0] },
            model: AffineSde::constant(vec![0.5], vec![0.3]),
            z_nu: vec![1.0],
            interval: (0.0, 1.0),
            integrand: BoundedIntegrand::Cos,
        },
        DynkinCase {
            name: "cosine h, drifted Brownian motion",
            h: TestFunction::Cosine { offset: 2.0 },
            model: AffineSde::constant(vec![0.2], vec![0.7]),
            z_nu: vec![0.5],
            interval: (1.0, 2.0),
            integrand: BoundedIntegrand::Tanh,
        },
        DynkinCase {
            name: "Gaussian bump h, Ornstein-Uhlenbeck",
            h: TestFunction::GaussianBump { offset: 0.5, width: 1.0 },
            model: AffineSde { intercept: vec![0.0], slope: vec![-1.0], sigma: vec![1.0] },
            z_nu: vec![0.3],
            interval: (1.0, 2.0),
            integrand: BoundedIntegrand::Tanh,
        },
        DynkinCase {
            name: "quadratic h, three players",
            h: TestFunction::Quadratic { offset: 1.0 },
            model: AffineSde::constant(vec![0.1, -0.2, 0.3], vec![0.5, 1.0, 1.5]),
            z_nu: vec![0.0, 0.5, 1.0],
            interval: (1.0, 2.0),
            integrand: BoundedIntegrand::Cos,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakOrderReport {
    pub steps: Vec<f64>,
    pub means: Vec<Estimate>,
    pub exact: f64,
    pub errors: Vec<f64>,
    pub slope: f64,
}

/// Weak error of 𝔼Z(U) for dZ = λZ du + s dB against the exact mean z₀e^{λU}.
///
/// The slope of log|error| on log(step) estimates the weak order.
pub fn weak_order_study(
    lambda: f64,
    s: f64,
    z0: f64,
    horizon: f64,
    steps: &[f64],
    n_paths: usize,
    seed: u64,
    executor: &Executor,
) -> Result<WeakOrderReport, DynamicsError> {
    let model = AffineSde::linear(lambda, s);
    let exact = z0 * (lambda * horizon).exp();
    let mut means = Vec::new();
    let mut errors = Vec::new();
    for &h in steps {
        let spec = SimulationSpec {
            start: 0.0,
            end: horizon,
            max_step: h,
            n_paths,
            seed,
            boundary: Boundary::Free,
            record: 0,
        };
        let ens = simulate_paths(&model, &[z0], &spec, &NoObserver, executor)?;
        let m = Moments::of(&ens.terminal_component(0)).mean_estimate();
        errors.push((m.value - exact).abs());
        means.push(m);
    }
    let lx: Vec<f64> = steps.iter().map(|h| h.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (slope, _) = linear_fit(&lx, &ly);
    Ok(WeakOrderReport { steps: steps.to_vec(), means, exact, errors, slope })
}

/// Largest ratio ‖μ̃(W) − μ̃(Ŵ)‖/‖W − Ŵ‖ over random pairs; compare with k₁.
pub fn estimate_lipschitz_w<R: Rng>(spec: &DriftParams, dim: usize, draws: usize, rng: &mut R) -> f64 {
    let mean = vec![0.0; dim];
    (0..draws)
        .map(|_| {
            let a: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..10.0)).collect();
            let b: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..10.0)).collect();
            let (ma, mb) = (spec.mu_tilde(&a, &mean), spec.mu_tilde(&b, &mean));
            let num = norm(&ma.iter().zip(&mb).map(|(x, y)| x - y).collect::<Vec<_>>());
            let den = norm(&a.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>());
            num / den
        })
        .fold(0.0, f64::max)
}

/// Checks non-negativity of the step and the overs range before simulating a match.
pub fn match_spec(config: &MatchConfig, n_paths: usize, seed: u64) -> Result<SimulationSpec, ConfigError> {
    check_non_negative("total_overs", config.total_overs)?;
    Ok(SimulationSpec {
        start: 0.0,
        end: config.total_overs,
        max_step: config.simulation.step,
        n_paths,
        seed,
        boundary: Boundary::Floor,
        record: config.simulation.recorded_paths.min(n_paths),
    })
}
