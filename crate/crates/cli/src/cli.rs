use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use odi_core::model::{load_config, MatchConfig};
use odi_core::montecarlo::Executor;

use crate::error::{CliError, CliResult, ExitStatus};
use crate::invocation::{execute, CommandSpec, Invocation, Outcome, RainOverrides, RunContext};
use crate::manifest::{
    config_hash, load_manifest, now_unix, record_outputs, RunManifest, ARTIFACT_VERSION, MANIFEST_FILE,
};
use crate::output::{Format, OutputSink};
use crate::snapshot::load_snapshot;
use crate::suites::Fault;

pub const DEFAULT_PATHS: usize = 1_000;
pub const DEFAULT_VALIDATE_PATHS: usize = 20_000;

#[derive(Debug, Parser)]
#[command(name = "odi", version, about = "Stochastic run dynamics for one-day cricket")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Match configuration (JSON); built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed; the config seed when omitted.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of Monte Carlo paths.
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Worker threads; 1 runs sequentially, omitted uses every core.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, default_value = "odi-out")]
    pub out_dir: PathBuf,
    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate full innings and report the expected team total and objective.
    Simulate,
    /// Optimal valuation coefficient β* with per-player first-order residuals.
    Beta {
        /// Innings state to evaluate at (JSON).
        #[arg(long)]
        snapshot: PathBuf,
    },
    /// Resume an innings interrupted by rain.
    RainResume {
        /// Innings state at the interruption (JSON).
        #[arg(long)]
        snapshot: PathBuf,
        /// Peak of the rain measure above its threshold.
        #[arg(long, default_value_t = 1.0)]
        excess: f64,
        /// Rain level that stops play.
        #[arg(long)]
        threshold: Option<f64>,
        /// Lost overs per unit of excess.
        #[arg(long)]
        severity: Option<f64>,
        /// Relative increase of λ₁ after the restart.
        #[arg(long)]
        dew_uplift: Option<f64>,
        /// Weight of the post-rain swing term.
        #[arg(long)]
        liouville_weight: Option<f64>,
    },
    /// Tables of α(u), β(u) and the snowflake area.
    BowlerDiagnose {
        #[arg(long, default_value_t = 30)]
        max_eta: u32,
    },
    /// Run the property suites; exits 5 if any fails.
    Validate {
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<Fault>,
    },
    /// Re-run the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
        /// Fail unless every output matches the recorded hash.
        #[arg(long)]
        check: bool,
    },
}

fn load(path: Option<&Path>) -> CliResult<MatchConfig> {
    match path {
        Some(p) => Ok(load_config(p)?),
        None => Ok(MatchConfig::default()),
    }
}

/// Resolves flags, files and defaults into a reproducible invocation.
pub fn resolve(global: &GlobalArgs, command: &Command) -> CliResult<Invocation> {
    let config = load(global.config.as_deref())?;
    let seed = global.seed.unwrap_or(config.seed);
    let default_paths = match command {
        Command::Validate { .. } => DEFAULT_VALIDATE_PATHS,
        _ => DEFAULT_PATHS,
    };
    let paths = global.paths.unwrap_or(default_paths);
    if paths == 0 {
        return Err(CliError::config("--paths must be at least 1"));
    }
    let command = match command {
        Command::Simulate => CommandSpec::Simulate,
        Command::Beta { snapshot } => CommandSpec::Beta { snapshot: load_snapshot(snapshot)? },
        Command::RainResume { snapshot, excess, threshold, severity, dew_uplift, liouville_weight } => {
            CommandSpec::RainResume {
                snapshot: load_snapshot(snapshot)?,
                excess: *excess,
                rain: RainOverrides {
                    threshold: *threshold,
                    severity: *severity,
                    dew_uplift: *dew_uplift,
                    liouville_weight: *liouville_weight,
                },
            }
        }
        Command::BowlerDiagnose { max_eta } => CommandSpec::BowlerDiagnose { max_eta: *max_eta },
        Command::Validate { inject_fault } => CommandSpec::Validate { fault: *inject_fault },
        Command::Replay { .. } => unreachable!("replay resolves from its manifest"),
    };
    Ok(Invocation { config, seed, paths, format: global.format, command })
}

/// Executes an invocation into `out_dir` and writes its manifest.
pub fn run_invocation(inv: &Invocation, workers: Option<usize>, out_dir: &Path) -> CliResult<(Outcome, RunManifest)> {
    let started = now_unix();
    let executor = Executor::with_workers(workers);
    let mut sink = OutputSink::create(out_dir, inv.format)?;
    let outcome = {
        let mut ctx = RunContext { executor: &executor, sink: &mut sink };
        execute(inv, &mut ctx)?
    };
    let manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: inv.command.name().into(),
        config_hash: config_hash(&inv.config),
        seed: inv.seed,
        workers,
        invocation: inv.clone(),
        outputs: record_outputs(out_dir, sink.written())?,
        started_unix: started,
        finished_unix: now_unix(),
    };
    sink.write_json(MANIFEST_FILE, &manifest)?;
    Ok((outcome, manifest))
}

pub fn run(cli: &Cli) -> CliResult<Outcome> {
    let g = &cli.global;
    match &cli.command {
        Command::Replay { manifest, check } => {
            let recorded = load_manifest(manifest)?;
            let workers = g.workers.or(recorded.workers);
            let (outcome, fresh) = run_invocation(&recorded.invocation, workers, &g.out_dir)?;
            if *check {
                let mismatched: Vec<&str> = recorded
                    .outputs
                    .iter()
                    .filter(|o| !fresh.outputs.iter().any(|f| f.file == o.file && f.sha256 == o.sha256))
                    .map(|o| o.file.as_str())
                    .collect();
                if !mismatched.is_empty() {
                    return Err(CliError::validation(format!("replay outputs differ: {}", mismatched.join(", "))));
                }
            }
            Ok(outcome)
        }
        command => {
            let inv = resolve(g, command)?;
            Ok(run_invocation(&inv, g.workers, &g.out_dir)?.0)
        }
    }
}

pub fn exit_status(result: &CliResult<Outcome>) -> ExitStatus {
    match result {
        Ok(o) => o.status,
        Err(e) => e.status,
    }
}
