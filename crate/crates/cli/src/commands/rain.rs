use odi_core::dynamics::{simulate_paths, Boundary, MatchDynamics, NoObserver, SimulationSpec};
use odi_core::model::MatchConfig;
use odi_core::montecarlo::{derive_seed, path_rng};
use odi_core::pathintegral::beta_star;
use odi_core::rain::{
    beta_star_rain, lost_overs, sample_gff, simulate_resumed, GffField, RainContext, RainParams, ResumeOutcome,
};
use serde::Serialize;

use super::beta::{beta_report, residual_table, BetaReport};
use super::{paths_table, summarize_ensemble, EnsembleSummary};
use crate::error::{CliError, CliResult};
use crate::invocation::{Invocation, Outcome, RainOverrides, RunContext};
use crate::manifest::ARTIFACT_VERSION;
use crate::output::Table;
use crate::snapshot::{foc_inputs, Snapshot};

/// Stream index reserved for the post-rain field so it never shares a stream with a path.
const FIELD_STREAM: u64 = 0x7261_696e;

pub fn effective_rain(config: &MatchConfig, o: &RainOverrides) -> CliResult<RainParams> {
    let mut rain = config.rain.clone();
    if let Some(v) = o.threshold {
        rain.threshold = v;
    }
    if let Some(v) = o.severity {
        rain.severity = v;
    }
    if let Some(v) = o.dew_uplift {
        rain.dew_uplift = v;
    }
    if let Some(v) = o.liouville_weight {
        rain.liouville_weight = v;
    }
    rain.validate()?;
    Ok(rain)
}

/// The config after the restart: λ̂₁ = λ₁(1 + uplift).
pub fn post_rain_config(config: &MatchConfig, rain: &RainParams) -> MatchConfig {
    let mut post = config.clone();
    post.environment.weather.lambda1 *= 1.0 + rain.dew_uplift;
    post.rain = rain.clone();
    post
}

#[derive(Debug, Serialize)]
struct FirstInnings {
    over: f64,
    wickets: u8,
    team_runs: f64,
    runs: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct Dew {
    lambda1: f64,
    lambda1_hat: f64,
}

#[derive(Debug, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
enum RainStatus {
    NoResume,
    Resumed {
        window: (f64, f64),
        rain_effective: bool,
        dew: Dew,
        liouville_weight: f64,
        resumed: EnsembleSummary,
        dry_continuation: EnsembleSummary,
        beta_star_rain: BetaReport,
        beta_star_dry: BetaReport,
    },
}

#[derive(Debug, Serialize)]
struct RainOutput<'a> {
    artifact_version: &'a str,
    command: &'a str,
    threshold: f64,
    severity: f64,
    excess: f64,
    stopping_over: f64,
    lost_overs: f64,
    first_innings: FirstInnings,
    #[serde(flatten)]
    status: RainStatus,
}

fn revised_table(snap: &Snapshot, dry: Option<&EnsembleSummary>, resumed: Option<&EnsembleSummary>) -> Table {
    let mut t = Table::new(["player", "runs_at_stop", "dry_expected", "resumed_expected", "resumed_se", "revision"]);
    let n = snap.runs.len();
    let get = |s: Option<&EnsembleSummary>, i: Option<usize>| match (s, i) {
        (Some(s), Some(i)) => s.players[i].expected_runs,
        (Some(s), None) => s.expected_total,
        (None, Some(i)) => odi_core::stats::Estimate { value: snap.runs[i], se: Some(0.0) },
        (None, None) => odi_core::stats::Estimate { value: snap.runs.iter().sum(), se: Some(0.0) },
    };
    for i in (0..n).map(Some).chain([None]) {
        let label = i.map_or("team".to_string(), |i| (i + 1).to_string());
        let stop = i.map_or(snap.runs.iter().sum(), |i| snap.runs[i]);
        let d = get(dry, i);
        let r = get(resumed, i);
        t.push(vec![
            label.as_str().into(),
            stop.into(),
            d.value.into(),
            r.value.into(),
            r.se.unwrap_or(f64::NAN).into(),
            (r.value - d.value).into(),
        ]);
    }
    t
}

/// Resumes the innings interrupted at the snapshot over.
///
/// Overs lost are ε = severity·excess (clamped, whole balls). Rain only changes the dynamics
/// when severity·excess > 0; otherwise the resumed segment is the dry continuation.
pub fn run(
    inv: &Invocation,
    snap: &Snapshot,
    excess: f64,
    overrides: &RainOverrides,
    ctx: &mut RunContext,
) -> CliResult<Outcome> {
    let config = &inv.config;
    snap.validate(config)?;
    if !(excess >= 0.0 && excess.is_finite()) {
        return Err(CliError::config(format!("invalid excess = {excess}: must be finite and non-negative")));
    }
    let rain = effective_rain(config, overrides)?;
    let total = config.total_overs;
    let stop = snap.over;
    let eps = lost_overs(excess, rain.severity, total - stop);
    let context = RainContext {
        threshold: rain.threshold,
        stopping_over: stop,
        peak_excess: excess,
        lost_overs: eps,
        total_overs: total,
    };
    let first_innings =
        FirstInnings { over: stop, wickets: snap.wickets, team_runs: snap.runs.iter().sum(), runs: snap.runs.clone() };

    let header = |status| RainOutput {
        artifact_version: ARTIFACT_VERSION,
        command: "rain-resume",
        threshold: rain.threshold,
        severity: rain.severity,
        excess,
        stopping_over: stop,
        lost_overs: eps,
        first_innings,
        status,
    };

    if context.abandoned() {
        ctx.sink.write_json("rain.json", &header(RainStatus::NoResume))?;
        ctx.sink.write_table("revised_totals", &revised_table(snap, None, None))?;
        return Ok(Outcome::ok(format!("no resumption: {eps} overs lost at over {stop}")));
    }

    let effective = rain.severity * excess > 0.0;
    let post_config = if effective { post_rain_config(config, &rain) } else { config.clone() };
    let weight = if effective { rain.liouville_weight } else { 0.0 };
    let w = snap.valuations(config);
    let dry = MatchDynamics::new(config)?.with_valuations(w.clone());
    let post = MatchDynamics::new(&post_config)?.with_valuations(w);
    let (lo, hi) = context.window();
    let field = if effective {
        let mut rng = path_rng(derive_seed(inv.seed, FIELD_STREAM), 0);
        sample_gff(lo, hi, rain.n_modes, rain.swing_share, &mut rng)?
    } else {
        GffField::zero(lo, hi)
    };

    let record = config.simulation.recorded_paths.min(inv.paths);
    let step = config.simulation.step;
    let outcome = simulate_resumed(
        &context,
        &post,
        &field,
        weight,
        &snap.runs,
        step,
        inv.paths,
        inv.seed,
        record,
        Boundary::Floor,
        ctx.executor,
    )?;
    let ResumeOutcome::Resumed { ensemble } = outcome else { unreachable!("window checked non-empty above") };
    let dry_spec = SimulationSpec {
        start: stop,
        end: total,
        max_step: step,
        n_paths: inv.paths,
        seed: inv.seed,
        boundary: Boundary::Floor,
        record: 0,
    };
    let dry_ens = simulate_paths(&dry, &snap.runs, &dry_spec, &NoObserver, ctx.executor)?;

    // the Liouville addend depends on neither W nor Z, so its valuation Jacobian is zero
    let rain_inputs = foc_inputs(&post_config, &post, snap)?;
    let rain_beta = beta_report(&rain_inputs, &beta_star_rain(&rain_inputs, None)?)?;
    let dry_inputs = foc_inputs(config, &dry, snap)?;
    let dry_beta = beta_report(&dry_inputs, &beta_star(&dry_inputs)?)?;

    let resumed = summarize_ensemble(&post_config, &ensemble, inv.seed);
    let dry_summary = summarize_ensemble(config, &dry_ens, inv.seed);
    let table = revised_table(snap, Some(&dry_summary), Some(&resumed));
    let message = format!(
        "resumed over [{lo}, {hi}]: expected total {:.4} vs dry {:.4}; beta*_rain = {}",
        resumed.expected_total.value, dry_summary.expected_total.value, rain_beta.beta_star
    );
    ctx.sink.write_table("paths", &paths_table(&ensemble))?;
    ctx.sink.write_table("revised_totals", &table)?;
    ctx.sink.write_table("residuals", &residual_table(&rain_beta))?;
    ctx.sink.write_json(
        "rain.json",
        &header(RainStatus::Resumed {
            window: (lo, hi),
            rain_effective: effective,
            dew: Dew {
                lambda1: config.environment.weather.lambda1,
                lambda1_hat: post_config.environment.weather.lambda1,
            },
            liouville_weight: weight,
            resumed,
            dry_continuation: dry_summary,
            beta_star_rain: rain_beta,
            beta_star_dry: dry_beta,
        }),
    )?;
    Ok(Outcome::ok(message))
}
