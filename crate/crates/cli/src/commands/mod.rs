pub mod beta;
pub mod bowler;
pub mod rain;
pub mod simulate;
pub mod validate;

use odi_core::dynamics::PathEnsemble;
use odi_core::model::MatchConfig;
use odi_core::montecarlo::{summarize, EnsembleReport, EnsembleSpec, Statistic};
use odi_core::stats::Estimate;
use serde::Serialize;

use crate::output::Table;

pub const QUANTILES: [f64; 3] = [0.05, 0.5, 0.95];

pub fn statistics() -> Vec<Statistic> {
    let mut s = vec![Statistic::Mean, Statistic::Variance];
    s.extend(QUANTILES.iter().map(|&q| Statistic::Quantile(q)));
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlayerRuns {
    pub player: usize,
    pub expected_runs: Estimate,
}

/// Ensemble summary: team total, per-player runs and the objective Σβ_i u_i.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub n_paths: usize,
    pub seed: u64,
    pub start_over: f64,
    pub end_over: f64,
    pub expected_total: Estimate,
    pub report: EnsembleReport,
    pub players: Vec<PlayerRuns>,
    pub objective: Estimate,
}

/// Observables per path: [team total, Z_1..Z_I, objective].
pub fn summarize_ensemble(config: &MatchConfig, ens: &PathEnsemble, seed: u64) -> EnsembleSummary {
    let beta = &config.simulation.objective_beta;
    let rows: Vec<Vec<f64>> = ens
        .terminal
        .iter()
        .zip(ens.terminal_totals())
        .map(|(z, total)| {
            let mut row = Vec::with_capacity(z.len() + 2);
            row.push(total);
            row.extend_from_slice(z);
            row.push(odi_core::model::objective_value(&config.players, z, beta));
            row
        })
        .collect();
    let spec = EnsembleSpec::new(rows.len(), seed).with_statistics(statistics());
    let report = summarize(&rows, &spec);
    let n = config.n_players();
    EnsembleSummary {
        n_paths: rows.len(),
        seed,
        start_over: ens.grid[0],
        end_over: *ens.grid.last().expect("non-empty grid"),
        expected_total: report.mean(0),
        players: (0..n).map(|i| PlayerRuns { player: i + 1, expected_runs: report.mean(i + 1) }).collect(),
        objective: report.mean(n + 1),
        report,
    }
}

/// Recorded paths as rows (u, Z_1..Z_I, path_id).
pub fn paths_table(ens: &PathEnsemble) -> Table {
    let dim = ens.terminal.first().map_or(0, Vec::len);
    let mut cols = vec!["u".to_string()];
    cols.extend((1..=dim).map(|i| format!("Z_{i}")));
    cols.push("path_id".into());
    let mut t = Table::new(cols);
    for p in &ens.recorded {
        for (u, z) in ens.grid.iter().zip(&p.values) {
            let mut row = vec![(*u).into()];
            row.extend(z.iter().map(|&v| v.into()));
            row.push(p.path_id.into());
            t.push(row);
        }
    }
    t
}
