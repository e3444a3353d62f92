use odi_core::dynamics::{match_spec, simulate_paths, MatchDynamics, NoObserver};
use serde::Serialize;

use super::{paths_table, summarize_ensemble, EnsembleSummary};
use crate::error::CliResult;
use crate::invocation::{Invocation, Outcome, RunContext};
use crate::manifest::ARTIFACT_VERSION;

#[derive(Serialize)]
struct SimulateReport<'a> {
    artifact_version: &'a str,
    command: &'a str,
    total_overs: f64,
    players: usize,
    sigma2_star: f64,
    ensemble: EnsembleSummary,
}

/// Full uninterrupted innings from Z = 0.
pub fn run(inv: &Invocation, ctx: &mut RunContext) -> CliResult<Outcome> {
    let config = &inv.config;
    let dynamics = MatchDynamics::new(config)?;
    let spec = match_spec(config, inv.paths, inv.seed)?;
    let z0 = vec![0.0; config.n_players()];
    let ens = simulate_paths(&dynamics, &z0, &spec, &NoObserver, ctx.executor)?;
    let summary = summarize_ensemble(config, &ens, inv.seed);
    let message = format!(
        "expected team total {:.4} (se {:.4}) over {} paths",
        summary.expected_total.value,
        summary.expected_total.se.unwrap_or(f64::NAN),
        summary.n_paths
    );
    ctx.sink.write_table("paths", &paths_table(&ens))?;
    ctx.sink.write_json(
        "summary.json",
        &SimulateReport {
            artifact_version: ARTIFACT_VERSION,
            command: "simulate",
            total_overs: config.total_overs,
            players: config.n_players(),
            sigma2_star: dynamics.sigma2_star(),
            ensemble: summary,
        },
    )?;
    Ok(Outcome::ok(message))
}
