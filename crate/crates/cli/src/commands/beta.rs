use odi_core::dynamics::MatchDynamics;
use odi_core::pathintegral::{beta_star, first_order_condition, BetaStar, FocInputs};
use serde::Serialize;

use crate::error::CliResult;
use crate::invocation::{Invocation, Outcome, RunContext};
use crate::manifest::ARTIFACT_VERSION;
use crate::output::Table;
use crate::snapshot::{foc_inputs, Snapshot};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlayerBeta {
    pub player: usize,
    pub beta: f64,
    pub bracket: f64,
    pub discounted: f64,
    /// First-order residual β·D + bracket at this player's β*.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaReport {
    pub denominator: f64,
    /// β* of player 1; equal to every player's value when the brackets coincide.
    pub beta_star: f64,
    pub players: Vec<PlayerBeta>,
}

pub fn beta_report(inputs: &FocInputs, bs: &BetaStar) -> CliResult<BetaReport> {
    let players = (0..bs.beta.len())
        .map(|i| {
            Ok(PlayerBeta {
                player: i + 1,
                beta: bs.beta[i],
                bracket: bs.brackets[i],
                discounted: inputs.discounted.get(i).copied().unwrap_or(f64::NAN),
                residual: first_order_condition(bs.beta[i], inputs, i)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(BetaReport { denominator: bs.denominator, beta_star: bs.beta[0], players })
}

pub fn residual_table(report: &BetaReport) -> Table {
    let mut t = Table::new(["player", "beta", "bracket", "discounted", "residual"]);
    for p in &report.players {
        t.push(vec![p.player.into(), p.beta.into(), p.bracket.into(), p.discounted.into(), p.residual.into()]);
    }
    t
}

#[derive(Serialize)]
struct BetaOutput<'a> {
    artifact_version: &'a str,
    command: &'a str,
    over: f64,
    wickets: u8,
    #[serde(flatten)]
    report: &'a BetaReport,
}

pub fn run(inv: &Invocation, snap: &Snapshot, ctx: &mut RunContext) -> CliResult<Outcome> {
    let config = &inv.config;
    snap.validate(config)?;
    let dynamics = MatchDynamics::new(config)?.with_valuations(snap.valuations(config));
    let inputs = foc_inputs(config, &dynamics, snap)?;
    let bs = beta_star(&inputs)?;
    let report = beta_report(&inputs, &bs)?;
    ctx.sink.write_json(
        "beta.json",
        &BetaOutput {
            artifact_version: ARTIFACT_VERSION,
            command: "beta",
            over: snap.over,
            wickets: snap.wickets,
            report: &report,
        },
    )?;
    ctx.sink.write_table("residuals", &residual_table(&report))?;
    Ok(Outcome::ok(format!("beta* = {} (D = {})", report.beta_star, report.denominator)))
}
