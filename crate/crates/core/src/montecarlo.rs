//! Ensemble execution: counter-based seeding, a worker-count independent executor and
//! per-observable statistics.
//!
//! Every trajectory owns a random stream derived from `(base seed, path index)` and the
//! per-path results are reduced in index order, so reports are bit-identical for any
//! number of workers.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{batch_means_se, quantile, Estimate, Moments};

/// Per-path random stream.
pub type PathRng = ChaCha8Rng;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("ensemble needs at least one path, got {0}")]
    InvalidPathCount(usize),
    #[error("path {index} failed: {source}")]
    Task {
        index: usize,
        #[source]
        source: Box<crate::Error>,
    },
    #[error("path {index} returned {got} observables, expected {expected}")]
    ShapeMismatch { index: usize, expected: usize, got: usize },
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the stream for path `index` under `base`.
///
/// `index -> splitmix64(splitmix64(base) + index * φ)` where φ is the odd 64-bit golden
/// ratio constant. Multiplication by an odd constant, the offset and the splitmix64
/// finaliser are all bijections of `u64`, so distinct indices never share a seed under the
/// same base.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base).wrapping_add(index.wrapping_mul(GOLDEN)))
}

pub fn path_rng(base: u64, index: u64) -> PathRng {
    PathRng::seed_from_u64(derive_seed(base, index))
}

/// Runs indexed work either sequentially or on a rayon pool.
///
/// Results always come back in index order; callers reduce them sequentially.
#[derive(Clone)]
pub struct Executor {
    #[cfg(feature = "parallel")]
    pool: Option<std::sync::Arc<rayon::ThreadPool>>,
    sequential: bool,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("workers", &self.workers()).finish()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::with_workers(None)
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Executor {
            #[cfg(feature = "parallel")]
            pool: None,
            sequential: true,
        }
    }

    /// `None` uses the global rayon pool, `Some(1)` runs inline.
    pub fn with_workers(workers: Option<usize>) -> Self {
        if workers == Some(1) || !cfg!(feature = "parallel") {
            return Self::sequential();
        }
        #[cfg(feature = "parallel")]
        {
            let pool = workers.map(|n| {
                std::sync::Arc::new(
                    rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().expect("failed to build worker pool"),
                )
            });
            Executor { pool, sequential: false }
        }
        #[cfg(not(feature = "parallel"))]
        unreachable!()
    }

    pub fn is_parallel(&self) -> bool {
        !self.sequential
    }

    pub fn workers(&self) -> usize {
        if self.sequential {
            return 1;
        }
        #[cfg(feature = "parallel")]
        {
            match &self.pool {
                Some(p) => p.current_num_threads(),
                None => rayon::current_num_threads(),
            }
        }
        #[cfg(not(feature = "parallel"))]
        1
    }

    /// `f(0), …, f(n-1)` collected in index order.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        if self.sequential {
            return (0..n).map(f).collect();
        }
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            let run = || (0..n).into_par_iter().map(&f).collect();
            match &self.pool {
                Some(p) => p.install(run),
                None => run(),
            }
        }
        #[cfg(not(feature = "parallel"))]
        unreachable!()
    }

    /// Applies `f(index, item)` to every element in place.
    pub fn for_each_mut<T, F>(&self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync + Send,
    {
        if self.sequential {
            items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
            return;
        }
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            match &self.pool {
                Some(p) => p.install(|| items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x))),
                None => items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x)),
            }
        }
        #[cfg(not(feature = "parallel"))]
        unreachable!()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "level")]
pub enum Statistic {
    Mean,
    Variance,
    Quantile(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n_paths: usize,
    pub seed: u64,
    pub workers: Option<usize>,
    pub statistics: Vec<Statistic>,
}

impl EnsembleSpec {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        EnsembleSpec { n_paths, seed, workers: None, statistics: vec![Statistic::Mean, Statistic::Variance] }
    }

    pub fn with_workers(mut self, workers: Option<usize>) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_statistics(mut self, statistics: Vec<Statistic>) -> Self {
        self.statistics = statistics;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileEstimate {
    pub level: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableReport {
    pub mean: Estimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<Estimate>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub quantiles: Vec<QuantileEstimate>,
    /// Batch-means SE of the mean (20 batches); agrees with `mean.se` for independent paths.
    pub batch_means_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub n_paths: usize,
    pub seed: u64,
    pub observables: Vec<ObservableReport>,
    /// Not serialised: reports must be reproducible byte for byte.
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl EnsembleReport {
    pub fn mean(&self, observable: usize) -> Estimate {
        self.observables[observable].mean
    }
}

/// Summarises an `n_paths × k` table of per-path observables (rows in path order).
pub fn summarize(samples: &[Vec<f64>], spec: &EnsembleSpec) -> EnsembleReport {
    let k = samples.first().map_or(0, Vec::len);
    let observables = (0..k)
        .map(|j| {
            let column: Vec<f64> = samples.iter().map(|row| row[j]).collect();
            summarize_column(&column, &spec.statistics)
        })
        .collect();
    EnsembleReport { n_paths: samples.len(), seed: spec.seed, observables, wall_clock: Duration::ZERO }
}

fn summarize_column(column: &[f64], statistics: &[Statistic]) -> ObservableReport {
    let m = Moments::of(column);
    let wants_quantiles = statistics.iter().any(|s| matches!(s, Statistic::Quantile(_)));
    let sorted = wants_quantiles.then(|| {
        let mut v = column.to_vec();
        v.sort_by(f64::total_cmp);
        v
    });
    let mut report = ObservableReport {
        mean: m.mean_estimate(),
        variance: None,
        quantiles: Vec::new(),
        batch_means_se: batch_means_se(column, 20),
    };
    for stat in statistics {
        match *stat {
            Statistic::Mean => {}
            Statistic::Variance => report.variance = Some(m.variance_estimate()),
            Statistic::Quantile(level) => {
                let sorted = sorted.as_deref().expect("sorted column");
                report.quantiles.push(QuantileEstimate { level, value: quantile(sorted, level) });
            }
        }
    }
    report
}

/// Runs `task(index, rng)` for every path and summarises the returned observables.
///
/// Each task receives the stream derived from `(spec.seed, index)`; all tasks must return
/// the same number of observables.
pub fn run_ensemble<F>(spec: &EnsembleSpec, task: F) -> Result<EnsembleReport, EnsembleError>
where
    F: Fn(usize, &mut PathRng) -> crate::Result<Vec<f64>> + Sync + Send,
{
    let executor = Executor::with_workers(spec.workers);
    run_ensemble_with(&executor, spec, task)
}

pub fn run_ensemble_with<F>(executor: &Executor, spec: &EnsembleSpec, task: F) -> Result<EnsembleReport, EnsembleError>
where
    F: Fn(usize, &mut PathRng) -> crate::Result<Vec<f64>> + Sync + Send,
{
    if spec.n_paths == 0 {
        return Err(EnsembleError::InvalidPathCount(0));
    }
    let start = Instant::now();
    let seed = spec.seed;
    let rows = executor.map(spec.n_paths, |i| {
        let mut rng = path_rng(seed, i as u64);
        task(i, &mut rng)
    });
    let mut samples = Vec::with_capacity(rows.len());
    for (index, row) in rows.into_iter().enumerate() {
        let row = row.map_err(|e| EnsembleError::Task { index, source: Box::new(e) })?;
        if let Some(first) = samples.first().map(Vec::len) {
            if row.len() != first {
                return Err(EnsembleError::ShapeMismatch { index, expected: first, got: row.len() });
            }
        }
        samples.push(row);
    }
    let mut report = summarize(&samples, spec);
    report.wall_clock = start.elapsed();
    log::debug!("ensemble of {} paths on {} workers in {:?}", spec.n_paths, executor.workers(), report.wall_clock);
    Ok(report)
}
