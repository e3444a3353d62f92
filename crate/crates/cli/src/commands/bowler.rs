use odi_core::bowler::{
    perimeter_and_sides, snowflake_area, snowflake_area_recursive, BowlerSummary, CharacteristicFunction,
    SNOWFLAKE_INCREMENT,
};
use odi_core::rain::uniform_grid;
use serde::Serialize;

use crate::error::CliResult;
use crate::invocation::{Invocation, Outcome, RunContext};
use crate::manifest::ARTIFACT_VERSION;
use crate::output::Table;

#[derive(Serialize)]
struct BowlerOutput<'a> {
    artifact_version: &'a str,
    command: &'a str,
    theta_ref: f64,
    rate: f64,
    vol: f64,
    phi_re: f64,
    phi_im: f64,
    summary: BowlerSummary,
}

/// α(u), β(u) on the step grid and Υ_η for η = 0..=max_eta.
pub fn run(inv: &Invocation, max_eta: u32, ctx: &mut RunContext) -> CliResult<Outcome> {
    let config = &inv.config;
    let b = &config.bowler;
    let summary = b.summary(config.total_overs)?;
    let cf = CharacteristicFunction::new(&b.coefficients(config.total_overs), summary.area)?;

    let mut ab = Table::new(["u", "alpha", "beta"]);
    for u in uniform_grid(config.total_overs, config.simulation.step) {
        ab.push(vec![u.into(), cf.alpha(u).into(), cf.beta(u, b.theta_ref).into()]);
    }
    let mut flake = Table::new(["eta", "area", "area_recursive", "sides", "perimeter"]);
    for eta in 0..=max_eta {
        let shape = perimeter_and_sides(eta as f64);
        flake.push(vec![
            (eta as usize).into(),
            snowflake_area(eta as f64, b.delta).into(),
            snowflake_area_recursive(eta, b.delta, SNOWFLAKE_INCREMENT).into(),
            shape.sides.into(),
            shape.perimeter.into(),
        ]);
    }
    let phi = cf.phi(b.theta_ref);
    let message = format!("sigma2* = {} (eta = {}, area = {})", summary.sigma2_star, summary.eta, summary.area);
    ctx.sink.write_table("char_fn", &ab)?;
    ctx.sink.write_table("snowflake", &flake)?;
    ctx.sink.write_json(
        "bowler.json",
        &BowlerOutput {
            artifact_version: ARTIFACT_VERSION,
            command: "bowler-diagnose",
            theta_ref: b.theta_ref,
            rate: cf.rate(),
            vol: cf.vol(),
            phi_re: phi.re,
            phi_im: phi.im,
            summary,
        },
    )?;
    Ok(Outcome::ok(message))
}
