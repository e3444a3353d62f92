//! Small statistics helpers shared by the ensemble engine and the property checks.

use serde::{Deserialize, Serialize};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().collect::<CompensatedSum>().value()
}

/// A point estimate with its Monte Carlo standard error.
///
/// `se` is `None` when it cannot be estimated (a single sample).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: Option<f64>,
}

impl Estimate {
    /// Number of standard errors separating the estimate from `target`.
    ///
    /// Returns `None` when the SE is undefined; a zero SE yields 0 on exact agreement and
    /// infinity otherwise.
    pub fn z_score(&self, target: f64) -> Option<f64> {
        let se = self.se?;
        let diff = (self.value - target).abs();
        if se > 0.0 {
            Some(diff / se)
        } else if diff == 0.0 {
            Some(0.0)
        } else {
            Some(f64::INFINITY)
        }
    }

    pub fn within(&self, target: f64, n_se: f64) -> bool {
        self.z_score(target).is_some_and(|z| z <= n_se)
    }
}

/// First four sample moments computed in a fixed order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// Central fourth moment (biased).
    pub fourth: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Moments { n, mean: f64::NAN, variance: f64::NAN, fourth: f64::NAN };
        }
        let mean = compensated_sum(values.iter().copied()) / n as f64;
        if n == 1 {
            return Moments { n, mean, variance: f64::NAN, fourth: f64::NAN };
        }
        let ss = compensated_sum(values.iter().map(|x| (x - mean).powi(2)));
        let s4 = compensated_sum(values.iter().map(|x| (x - mean).powi(4)));
        Moments { n, mean, variance: ss / (n - 1) as f64, fourth: s4 / n as f64 }
    }

    pub fn mean_estimate(&self) -> Estimate {
        let se = (self.n > 1).then(|| (self.variance / self.n as f64).sqrt());
        Estimate { value: self.mean, se }
    }

    /// Sample variance with the large-sample SE `sqrt((m4 - s^4) / n)`.
    pub fn variance_estimate(&self) -> Estimate {
        let se = (self.n > 1).then(|| ((self.fourth - self.variance * self.variance).max(0.0) / self.n as f64).sqrt());
        Estimate { value: self.variance, se }
    }
}

pub fn mean(values: &[f64]) -> f64 {
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// Sample covariance of paired observations (unbiased) with the SE of the product mean.
pub fn covariance_estimate(xs: &[f64], ys: &[f64]) -> Estimate {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    let mx = mean(xs);
    let my = mean(ys);
    let prods: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).collect();
    let m = Moments::of(&prods);
    let cov = m.mean * n as f64 / (n - 1).max(1) as f64;
    Estimate { value: cov, se: m.mean_estimate().se }
}

/// Empirical quantile with linear interpolation between order statistics (type 7).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Batch-means standard error of the mean using `n_batches` contiguous batches.
pub fn batch_means_se(values: &[f64], n_batches: usize) -> Option<f64> {
    let n_batches = n_batches.min(values.len());
    if n_batches < 2 {
        return None;
    }
    let size = values.len() / n_batches;
    let means: Vec<f64> = (0..n_batches).map(|b| mean(&values[b * size..(b + 1) * size])).collect();
    Moments::of(&means).mean_estimate().se
}

/// Ordinary least-squares slope and intercept of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let sxy = compensated_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let sxx = compensated_sum(x.iter().map(|a| (a - mx).powi(2)));
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
