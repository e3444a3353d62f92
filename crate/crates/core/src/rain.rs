//! Rain interruption: the stopping over, lost overs, gauges and δ-fine partitions, the
//! gauge (Henstock–Kurzweil) integral, the Gaussian free field with its √(8/3)-Liouville
//! drift, and β* after the restart.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{Boundary, DynamicsError, NoObserver, PathEnsemble, SdeModel, SimulationSpec};
use crate::model::{check_non_negative, check_range, ConfigError, BALL};
use crate::montecarlo::{path_rng, Executor};
use crate::pathintegral::{beta_star, BetaStar, FocInputs, PathIntegralError};
use crate::stats::CompensatedSum;

/// γ = √(8/3).
pub const LIOUVILLE_GAMMA: f64 = 1.632_993_161_855_452;
const EXP_GUARD: f64 = 700.0;

#[derive(Debug, Error)]
pub enum RainError {
    #[error("gauge must be positive and finite, got delta({at}) = {value}")]
    InvalidGauge { at: f64, value: f64 },
    #[error("refinement depth {depth} exceeded on cell [{lo}, {hi}]")]
    DepthExceeded { lo: f64, hi: f64, depth: u32 },
    #[error("gauge integral did not settle: last successive difference {difference:e} after {rounds} rounds")]
    NoConvergence { difference: f64, rounds: u32 },
    #[error("additivity defect {defect:e} on [{lo}, {hi}]")]
    Additivity { lo: f64, hi: f64, defect: f64 },
    #[error("empty window [{lo}, {hi}]")]
    EmptyWindow { lo: f64, hi: f64 },
    #[error("Liouville exponent {0} exceeds the overflow guard")]
    Overflow(f64),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    PathIntegral(#[from] PathIntegralError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RainParams {
    /// Rain measure b that stops play once the rain Brownian motion exceeds it.
    pub threshold: f64,
    /// Lost overs per unit of peak excess.
    pub severity: f64,
    /// λ̂₁ = λ₁(1 + dew_uplift) after the restart.
    pub dew_uplift: f64,
    /// Multiplier of the Liouville drift.
    pub liouville_weight: f64,
    pub n_modes: usize,
    /// Share w of the field variance carried by swing: φ = √w·φ₁ + √(1−w)·φ₂.
    pub swing_share: f64,
    /// Resolution of the rain Brownian path in overs.
    pub step: f64,
}

impl Default for RainParams {
    fn default() -> Self {
        RainParams {
            threshold: 1.0,
            severity: 2.0,
            dew_uplift: 0.25,
            liouville_weight: 1.0,
            n_modes: 256,
            swing_share: 0.5,
            step: BALL,
        }
    }
}

impl RainParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_range("rain.threshold", self.threshold, f64::MIN, f64::MAX, true, true)?;
        check_non_negative("rain.severity", self.severity)?;
        check_non_negative("rain.dew_uplift", self.dew_uplift)?;
        check_non_negative("rain.liouville_weight", self.liouville_weight)?;
        if self.n_modes == 0 {
            return Err(ConfigError::invalid("rain.n_modes", 0.0, "must be positive"));
        }
        check_range("rain.swing_share", self.swing_share, 0.0, 1.0, true, true)?;
        check_range("rain.step", self.step, 0.0, BALL, false, true)
    }
}

/// First grid over at which the path exceeds `b`; the last grid over if it never does.
pub fn stopping_over(b: f64, path: &[f64], grid: &[f64]) -> f64 {
    path.iter().zip(grid).find(|(x, _)| **x > b).map(|(_, u)| *u).unwrap_or(*grid.last().expect("non-empty grid"))
}

/// Stopping over with Brownian-bridge detection of crossings between grid points.
///
/// Given both endpoints below `b`, the bridge crosses with probability
/// exp(−2(b − B_k)(b − B_{k+1})/Δt); the crossing is reported at the next grid over.
pub fn stopping_over_bridged<R: Rng + ?Sized>(b: f64, path: &[f64], grid: &[f64], rng: &mut R) -> f64 {
    if path[0] > b {
        return grid[0];
    }
    for k in 1..path.len() {
        if path[k] > b {
            return grid[k];
        }
        let dt = grid[k] - grid[k - 1];
        let p = (-2.0 * (b - path[k - 1]) * (b - path[k]) / dt).exp();
        if rng.random::<f64>() < p {
            return grid[k];
        }
    }
    *grid.last().expect("non-empty grid")
}

/// Standard Brownian path on `grid` (B = 0 at the first grid point).
pub fn brownian_path<R: Rng + ?Sized>(grid: &[f64], rng: &mut R) -> Vec<f64> {
    let mut b = Vec::with_capacity(grid.len());
    b.push(0.0);
    for w in grid.windows(2) {
        let z: f64 = rng.sample(StandardNormal);
        b.push(b.last().unwrap() + (w[1] - w[0]).sqrt() * z);
    }
    b
}

pub fn uniform_grid(end: f64, step: f64) -> Vec<f64> {
    let n = (end / step - 1e-9).ceil().max(1.0) as usize;
    (0..=n).map(|k| if k == n { end } else { k as f64 * end / n as f64 }).collect()
}

/// Stopping overs of `n` independent rain paths, path i on stream (seed, i).
pub fn sample_stopping_overs(
    b: f64,
    horizon: f64,
    step: f64,
    n: usize,
    seed: u64,
    bridged: bool,
    executor: &Executor,
) -> Vec<f64> {
    let grid = uniform_grid(horizon, step);
    executor.map(n, |i| {
        let mut rng = path_rng(seed, i as u64);
        let path = brownian_path(&grid, &mut rng);
        if bridged {
            stopping_over_bridged(b, &path, &grid, &mut rng)
        } else {
            stopping_over(b, &path, &grid)
        }
    })
}

/// ε = clamp(severity·excess, 0, U − Ũ) rounded down to whole balls.
pub fn lost_overs(peak_excess: f64, severity: f64, remaining: f64) -> f64 {
    let eps = (severity * peak_excess).clamp(0.0, remaining.max(0.0));
    (eps * 6.0 + 1e-9).floor() / 6.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RainContext {
    pub threshold: f64,
    pub stopping_over: f64,
    pub peak_excess: f64,
    pub lost_overs: f64,
    pub total_overs: f64,
}

impl RainContext {
    /// Builds the context from one rain path: Ũ is its stopping over, the peak excess its
    /// maximum above `b`.
    pub fn from_path(b: f64, path: &[f64], grid: &[f64], severity: f64) -> Self {
        let total = *grid.last().expect("non-empty grid");
        let stop = stopping_over(b, path, grid);
        let peak = path.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x));
        let peak_excess = (peak - b).max(0.0);
        let lost = lost_overs(peak_excess, severity, total - stop);
        RainContext { threshold: b, stopping_over: stop, peak_excess, lost_overs: lost, total_overs: total }
    }

    /// Resumed window [Ũ, U − ε].
    pub fn window(&self) -> (f64, f64) {
        (self.stopping_over, self.total_overs - self.lost_overs)
    }

    pub fn abandoned(&self) -> bool {
        let (lo, hi) = self.window();
        hi - lo <= 1e-12
    }
}

/// δ(𝔲) on a window.
pub trait Gauge {
    fn delta(&self, u: f64) -> f64;
}

impl<F: Fn(f64) -> f64> Gauge for F {
    fn delta(&self, u: f64) -> f64 {
        self(u)
    }
}

/// Samples the gauge on 1001 points and rejects non-positive or non-finite values.
pub fn validate_gauge<G: Gauge + ?Sized>(gauge: &G, lo: f64, hi: f64) -> Result<(), RainError> {
    const SAMPLES: usize = 1000;
    for k in 0..=SAMPLES {
        let u = lo + (hi - lo) * k as f64 / SAMPLES as f64;
        let d = gauge.delta(u);
        if !(d > 0.0 && d.is_finite()) {
            return Err(RainError::InvalidGauge { at: u, value: d });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TaggedCell {
    pub tag: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaggedPartition {
    pub cells: Vec<TaggedCell>,
}

const MAX_DEPTH: u32 = 60;

struct Scaled<'a, G: ?Sized> {
    gauge: &'a G,
    factor: f64,
}

impl<G: Gauge + ?Sized> Gauge for Scaled<'_, G> {
    fn delta(&self, u: f64) -> f64 {
        self.factor * self.gauge.delta(u)
    }
}

/// A δ-fine tagged partition of [lo, hi] by bisection.
///
/// A cell is accepted with its midpoint as tag when its half-length is below δ(mid), or
/// with an endpoint tag when its full length is below δ there; otherwise it is halved.
pub fn refine_to_delta_fine<G: Gauge + ?Sized>(lo: f64, hi: f64, gauge: &G) -> Result<TaggedPartition, RainError> {
    if !(hi > lo) {
        return Err(RainError::EmptyWindow { lo, hi });
    }
    validate_gauge(gauge, lo, hi)?;
    let mut cells = Vec::new();
    let mut stack = vec![(lo, hi, 0u32)];
    while let Some((a, b, depth)) = stack.pop() {
        let mid = 0.5 * (a + b);
        let len = b - a;
        let tag = if 0.5 * len < gauge.delta(mid) {
            Some(mid)
        } else if len < gauge.delta(a) {
            Some(a)
        } else if len < gauge.delta(b) {
            Some(b)
        } else {
            None
        };
        match tag {
            Some(tag) => cells.push(TaggedCell { tag, lo: a, hi: b }),
            None if depth >= MAX_DEPTH || mid <= a || mid >= b => {
                return Err(RainError::DepthExceeded { lo: a, hi: b, depth });
            }
            None => {
                // right first so the left half is processed next and cells come out in order
                stack.push((mid, b, depth + 1));
                stack.push((a, mid, depth + 1));
            }
        }
    }
    Ok(TaggedPartition { cells })
}

/// Independent check that a partition tiles [lo, hi] and is δ-fine.
pub fn audit_delta_fine<G: Gauge + ?Sized>(p: &TaggedPartition, lo: f64, hi: f64, gauge: &G) -> Result<(), String> {
    let first = p.cells.first().ok_or("empty partition")?;
    if first.lo != lo {
        return Err(format!("partition starts at {} not {lo}", first.lo));
    }
    if p.cells.last().unwrap().hi != hi {
        return Err(format!("partition ends at {} not {hi}", p.cells.last().unwrap().hi));
    }
    for (k, c) in p.cells.iter().enumerate() {
        if k > 0 && p.cells[k - 1].hi != c.lo {
            return Err(format!("gap or overlap before cell {k}"));
        }
        if !(c.lo < c.hi) {
            return Err(format!("cell {k} is degenerate"));
        }
        if !(c.lo <= c.tag && c.tag <= c.hi) {
            return Err(format!("tag of cell {k} lies outside it"));
        }
        let d = gauge.delta(c.tag);
        if !(c.lo > c.tag - d && c.hi < c.tag + d) {
            return Err(format!("cell {k} [{}, {}] not inside the gauge ball of radius {d} at {}", c.lo, c.hi, c.tag));
        }
    }
    Ok(())
}

/// Riemann sum Σ f(tag)·length with compensated summation.
pub fn riemann_sum<F: Fn(f64) -> f64 + ?Sized>(f: &F, p: &TaggedPartition) -> f64 {
    p.cells.iter().map(|c| f(c.tag) * (c.hi - c.lo)).collect::<CompensatedSum>().value()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HkIntegral {
    pub value: f64,
    pub rounds: u32,
    pub cells: usize,
    /// Last successive difference.
    pub difference: f64,
    pub partition: TaggedPartition,
}

const MAX_ROUNDS: u32 = 48;
const MAX_CELLS: usize = 1 << 22;

/// Gauge integral of f over [lo, hi].
///
/// Riemann sums over δ/2^k-fine partitions are compared round by round until two
/// successive sums over genuinely refined partitions differ by less than `tol`. The sum over
/// the final partition is checked for additivity across the window midpoint.
pub fn hk_integrate<F, G>(f: &F, lo: f64, hi: f64, gauge: &G, tol: f64) -> Result<HkIntegral, RainError>
where
    F: Fn(f64) -> f64 + ?Sized,
    G: Gauge + ?Sized,
{
    let mut prev: Option<(f64, usize)> = None;
    let mut difference = f64::INFINITY;
    for round in 0..MAX_ROUNDS {
        let scaled = Scaled { gauge, factor: 0.5f64.powi(round as i32) };
        let partition = refine_to_delta_fine(lo, hi, &scaled)?;
        let cells = partition.cells.len();
        let value = riemann_sum(f, &partition);
        if let Some((p, prev_cells)) = prev {
            if cells > prev_cells {
                difference = (value - p).abs();
                if difference < tol {
                    check_additivity(f, &partition, lo, hi, value)?;
                    return Ok(HkIntegral { value, rounds: round + 1, cells, difference, partition });
                }
            }
        }
        if cells > MAX_CELLS {
            return Err(RainError::NoConvergence { difference, rounds: round + 1 });
        }
        prev = Some((value, cells));
    }
    Err(RainError::NoConvergence { difference, rounds: MAX_ROUNDS })
}

fn check_additivity<F: Fn(f64) -> f64 + ?Sized>(
    f: &F,
    p: &TaggedPartition,
    lo: f64,
    hi: f64,
    total: f64,
) -> Result<(), RainError> {
    let mid = 0.5 * (lo + hi);
    let (left, right): (Vec<TaggedCell>, Vec<TaggedCell>) = p.cells.iter().partition(|c| c.hi <= mid);
    if right.first().is_some_and(|c| c.lo < mid) {
        // the midpoint is interior to a single cell; nothing to split
        return Ok(());
    }
    let sum = riemann_sum(f, &TaggedPartition { cells: left }) + riemann_sum(f, &TaggedPartition { cells: right });
    let defect = (sum - total).abs();
    if defect > 1e-12 * (1.0 + total.abs()) {
        return Err(RainError::Additivity { lo, hi, defect });
    }
    Ok(())
}

/// Gaussian free field on an interval with zero boundary values.
///
/// φ = √w·φ₁ + √(1−w)·φ₂ with φ₁, φ₂ independent expansions in the sine basis
/// e_k(x) = A_k sin(kπ(x−lo)/L), A_k² = 4L/(k²π), which is orthonormal under
/// (2π)⁻¹∫∇·∇. The covariance is 2π·G with G(x,y) = min·(L − max)/L in window coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GffField {
    pub lo: f64,
    pub hi: f64,
    /// Scaled swing coefficients √w·ξ¹_k.
    pub swing: Vec<f64>,
    /// Scaled outfield coefficients √(1−w)·ξ²_k.
    pub outfield: Vec<f64>,
}

impl GffField {
    pub fn zero(lo: f64, hi: f64) -> Self {
        GffField { lo, hi, swing: Vec::new(), outfield: Vec::new() }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    fn basis_sum(&self, coeffs: &[f64], u: f64) -> f64 {
        if u <= self.lo || u >= self.hi || coeffs.is_empty() {
            return 0.0;
        }
        let l = self.len();
        let x = PI * (u - self.lo) / l;
        let amp = (4.0 * l / PI).sqrt();
        coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let k = (k + 1) as f64;
                c * amp / k * (k * x).sin()
            })
            .sum()
    }

    pub fn swing_at(&self, u: f64) -> f64 {
        self.basis_sum(&self.swing, u)
    }

    pub fn outfield_at(&self, u: f64) -> f64 {
        self.basis_sum(&self.outfield, u)
    }

    /// φ(u); exactly zero on and outside the window ends.
    pub fn value(&self, u: f64) -> f64 {
        if u <= self.lo || u >= self.hi {
            return 0.0;
        }
        let total: Vec<f64> = (0..self.swing.len().max(self.outfield.len()))
            .map(|k| self.swing.get(k).copied().unwrap_or(0.0) + self.outfield.get(k).copied().unwrap_or(0.0))
            .collect();
        self.basis_sum(&total, u)
    }

    /// weight·exp(√(8/3)·φ(u)).
    pub fn liouville_drift(&self, u: f64, weight: f64) -> Result<f64, RainError> {
        Ok(weight * liouville_density(self.value(u))?)
    }
}

/// exp(√(8/3)·φ), guarded against overflow.
pub fn liouville_density(phi: f64) -> Result<f64, RainError> {
    let x = LIOUVILLE_GAMMA * phi;
    if x > EXP_GUARD || x.is_nan() {
        return Err(RainError::Overflow(x));
    }
    Ok(x.exp())
}

/// One GFF sample with `n_modes` modes per component.
pub fn sample_gff<R: Rng + ?Sized>(
    lo: f64,
    hi: f64,
    n_modes: usize,
    swing_share: f64,
    rng: &mut R,
) -> Result<GffField, RainError> {
    if !(hi > lo) {
        return Err(RainError::EmptyWindow { lo, hi });
    }
    let (a, b) = (swing_share.sqrt(), (1.0 - swing_share).sqrt());
    let swing = (0..n_modes).map(|_| a * rng.sample::<f64, _>(StandardNormal)).collect();
    let outfield = (0..n_modes).map(|_| b * rng.sample::<f64, _>(StandardNormal)).collect();
    Ok(GffField { lo, hi, swing, outfield })
}

/// 2π·G(x, y) for the interval [lo, hi].
pub fn gff_covariance(lo: f64, hi: f64, x: f64, y: f64) -> f64 {
    let l = hi - lo;
    let (s, t) = (x - lo, y - lo);
    2.0 * PI * s.min(t) * (l - s.max(t)) / l
}

/// A model plus the deterministic drift addend weight·exp(√(8/3)φ(u)) in every component.
pub struct WithLiouville<'a, M: ?Sized> {
    pub inner: &'a M,
    pub field: &'a GffField,
    pub weight: f64,
}

impl<M: SdeModel + ?Sized> SdeModel for WithLiouville<'_, M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn drift(&self, u: f64, z: &[f64], mean: &[f64], out: &mut [f64]) -> Result<(), DynamicsError> {
        self.inner.drift(u, z, mean, out)?;
        if self.weight != 0.0 {
            let extra = self
                .field
                .liouville_drift(u, self.weight)
                .map_err(|_| DynamicsError::NonFinite { path: usize::MAX, over: u })?;
            out.iter_mut().for_each(|m| *m += extra);
        }
        Ok(())
    }

    fn diffusion(&self, u: f64, z: &[f64], out: &mut [f64]) -> Result<(), DynamicsError> {
        self.inner.diffusion(u, z, out)
    }

    fn mean_field(&self) -> bool {
        self.inner.mean_field()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ResumeOutcome {
    /// ε = U − Ũ: play does not restart.
    NoResume,
    Resumed {
        ensemble: PathEnsemble,
    },
}

/// Simulates the resumed window [Ũ, U − ε] from `z_start` under
/// dZ = μ d𝔲 + weight·e^{√(8/3)φ} d𝔲 + σ̂ dB.
#[allow(clippy::too_many_arguments)]
pub fn simulate_resumed<M: SdeModel + ?Sized>(
    rain: &RainContext,
    model: &M,
    field: &GffField,
    weight: f64,
    z_start: &[f64],
    max_step: f64,
    n_paths: usize,
    seed: u64,
    record: usize,
    boundary: Boundary,
    executor: &Executor,
) -> Result<ResumeOutcome, RainError> {
    if rain.abandoned() {
        return Ok(ResumeOutcome::NoResume);
    }
    let (start, end) = rain.window();
    let spec = SimulationSpec { start, end, max_step, n_paths, seed, boundary, record };
    let with = WithLiouville { inner: model, field, weight };
    let ensemble = crate::dynamics::simulate_paths(&with, z_start, &spec, &NoObserver, executor)?;
    Ok(ResumeOutcome::Resumed { ensemble })
}

/// Post-rain β*: as [`beta_star`] with ∂(μ + e^{√(8/3)φ})/∂W in place of ∂μ/∂W and the
/// covariance sensitivities of σ̂.
///
/// `liouville_jacobian` is ∂(weight·e^{√(8/3)φ})/∂W; it is zero for the W-independent
/// default and may be omitted.
pub fn beta_star_rain(inputs: &FocInputs, liouville_jacobian: Option<&DMatrix<f64>>) -> Result<BetaStar, RainError> {
    match liouville_jacobian {
        None => Ok(beta_star(inputs)?),
        Some(j) => {
            let mut shifted = inputs.clone();
            if j.shape() != shifted.drift_jacobian.shape() {
                return Err(
                    PathIntegralError::Shape("Liouville Jacobian does not match the drift Jacobian".into()).into()
                );
            }
            shifted.drift_jacobian += j;
            Ok(beta_star(&shifted)?)
        }
    }
}
