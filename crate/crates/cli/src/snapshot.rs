//! Match state snapshots and assembly of the first-order-condition inputs.

use std::path::Path;

use nalgebra::DMatrix;
use odi_core::dynamics::MatchDynamics;
use odi_core::model::{discounted_score, MatchConfig};
use odi_core::pathintegral::{valuation_sensitivities, FocInputs, PenalizationField};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// State of the batting side at over `over`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub over: f64,
    #[serde(default)]
    pub wickets: u8,
    /// Z_i(u): runs of each player in the current innings.
    pub runs: Vec<f64>,
    /// W_i; the config valuations when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valuations: Option<Vec<f64>>,
    /// u_i = Σ_m e^{−ρ_i m}Z_im; computed from the roster when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discounted: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derivatives: Option<DerivativeOverrides>,
}

/// Explicit derivative values; any entry given replaces the computed one. Matrices are row-major.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DerivativeOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_z: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_zz: Option<Vec<Vec<f64>>>,
    /// Rows j, columns l: ∂μ_j/∂W_l.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift_jacobian: Option<Vec<Vec<f64>>>,
    /// One matrix ∂(σσᵀ)/∂W_l per valuation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariance_sensitivity: Option<Vec<Vec<Vec<f64>>>>,
    /// Rows l, columns i: ∂W_l/∂W_i.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupling: Option<Vec<Vec<f64>>>,
}

pub fn load_snapshot(path: &Path) -> CliResult<Snapshot> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let snap: Snapshot =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok(snap)
}

impl Snapshot {
    pub fn validate(&self, config: &MatchConfig) -> CliResult<()> {
        let n = config.n_players();
        let bad = |what: &str, got: usize| {
            CliError::config(format!("snapshot.{what} has {got} entries, config has {n} players"))
        };
        if self.runs.len() != n {
            return Err(bad("runs", self.runs.len()));
        }
        if let Some(w) = &self.valuations {
            if w.len() != n {
                return Err(bad("valuations", w.len()));
            }
        }
        if let Some(d) = &self.discounted {
            if d.len() != n {
                return Err(bad("discounted", d.len()));
            }
        }
        if !(0.0..=config.total_overs).contains(&self.over) || !self.over.is_finite() {
            return Err(CliError::config(format!("snapshot.over = {} outside [0, {}]", self.over, config.total_overs)));
        }
        let balls = self.over * 6.0;
        if (balls - balls.round()).abs() > 1e-9 {
            return Err(CliError::config(format!("snapshot.over = {} is not a whole number of balls", self.over)));
        }
        if self.wickets > 9 {
            return Err(CliError::config(format!("snapshot.wickets = {} exceeds 9", self.wickets)));
        }
        if self.runs.iter().any(|z| !z.is_finite() || *z < 0.0) {
            return Err(CliError::config("snapshot.runs must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn valuations(&self, config: &MatchConfig) -> Vec<f64> {
        self.valuations.clone().unwrap_or_else(|| config.valuations())
    }

    /// u_i with the current innings recorded as match m = 1.
    pub fn discounted(&self, config: &MatchConfig) -> Vec<f64> {
        self.discounted.clone().unwrap_or_else(|| {
            config.players.iter().zip(&self.runs).map(|(p, &z)| discounted_score(&p.with_current_innings(z))).collect()
        })
    }
}

fn matrix(name: &str, rows: &[Vec<f64>], shape: (usize, usize)) -> CliResult<DMatrix<f64>> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(CliError::config(format!("derivatives.{name} must be {}x{}", shape.0, shape.1)));
    }
    Ok(DMatrix::from_fn(shape.0, shape.1, |r, c| rows[r][c]))
}

/// Gathers g_Z, g_ZZ, ∂μ/∂W, ∂(σσᵀ)/∂W and ∂W/∂W_i at the snapshot.
///
/// Drift and covariance sensitivities come from central differences of `dynamics` unless the
/// snapshot overrides them.
pub fn foc_inputs(config: &MatchConfig, dynamics: &MatchDynamics, snap: &Snapshot) -> CliResult<FocInputs> {
    let n = config.n_players();
    let u = snap.over;
    let z = &snap.runs;
    let w = snap.valuations(config);
    let ov = snap.derivatives.clone().unwrap_or_default();
    let g = &config.penalization;

    let g_z = match ov.g_z {
        Some(v) if v.len() == n => v,
        Some(_) => return Err(CliError::config(format!("derivatives.g_z must have {n} entries"))),
        None => g.gradient(u, z),
    };
    let g_zz = match &ov.g_zz {
        Some(m) => matrix("g_zz", m, (n, n))?,
        None => g.hessian(u, z),
    };
    let (drift_jacobian, covariance_sensitivity) = match (&ov.drift_jacobian, &ov.covariance_sensitivity) {
        (Some(j), Some(s)) => (matrix("drift_jacobian", j, (n, n))?, sensitivities(s, n)?),
        (j, s) => {
            let (fd_j, fd_s) = valuation_sensitivities(dynamics, u, &w, z)?;
            let j = match j {
                Some(j) => matrix("drift_jacobian", j, (n, n))?,
                None => fd_j,
            };
            let s = match s {
                Some(s) => sensitivities(s, n)?,
                None => fd_s,
            };
            (j, s)
        }
    };
    let coupling = match &ov.coupling {
        Some(c) => matrix("coupling", c, (n, n))?,
        None => DMatrix::identity(n, n),
    };
    Ok(FocInputs { discounted: snap.discounted(config), g_z, g_zz, drift_jacobian, covariance_sensitivity, coupling })
}

fn sensitivities(s: &[Vec<Vec<f64>>], n: usize) -> CliResult<Vec<DMatrix<f64>>> {
    if s.len() != n {
        return Err(CliError::config(format!("derivatives.covariance_sensitivity needs {n} matrices")));
    }
    s.iter().map(|m| matrix("covariance_sensitivity", m, (n, n))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length_and_off_grid_over() {
        let config = MatchConfig::default();
        let mut snap = Snapshot {
            over: 10.0,
            wickets: 0,
            runs: vec![0.0; 3],
            valuations: None,
            discounted: None,
            derivatives: None,
        };
        assert!(snap.validate(&config).is_err());
        snap.runs = vec![0.0; config.n_players()];
        assert!(snap.validate(&config).is_ok());
        snap.over = 10.1;
        assert!(snap.validate(&config).is_err());
    }

    #[test]
    fn override_matrices_are_row_major() {
        let m = matrix("x", &[vec![1.0, 2.0], vec![3.0, 4.0]], (2, 2)).unwrap();
        assert_eq!(m[(0, 1)], 2.0);
        assert_eq!(m[(1, 0)], 3.0);
        assert!(matrix("x", &[vec![1.0]], (2, 2)).is_err());
    }
}
