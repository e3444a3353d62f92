//! A fully resolved command: everything needed to reproduce its outputs, minus the worker
//! count and output directory, which never change results.

use odi_core::model::MatchConfig;
use odi_core::montecarlo::Executor;
use serde::{Deserialize, Serialize};

use crate::commands;
use crate::error::{CliResult, ExitStatus};
use crate::output::{Format, OutputSink};
use crate::snapshot::Snapshot;
use crate::suites::Fault;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Invocation {
    pub config: MatchConfig,
    pub seed: u64,
    pub paths: usize,
    pub format: Format,
    pub command: CommandSpec,
}

/// Rain settings given on the command line; unset fields fall back to the config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RainOverrides {
    pub threshold: Option<f64>,
    pub severity: Option<f64>,
    pub dew_uplift: Option<f64>,
    pub liouville_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CommandSpec {
    Simulate,
    Beta {
        snapshot: Snapshot,
    },
    RainResume {
        snapshot: Snapshot,
        /// Peak of the rain measure above its threshold.
        excess: f64,
        rain: RainOverrides,
    },
    BowlerDiagnose {
        max_eta: u32,
    },
    Validate {
        fault: Option<Fault>,
    },
}

impl CommandSpec {
    pub fn name(&self) -> &'static str {
        match self {
            CommandSpec::Simulate => "simulate",
            CommandSpec::Beta { .. } => "beta",
            CommandSpec::RainResume { .. } => "rain-resume",
            CommandSpec::BowlerDiagnose { .. } => "bowler-diagnose",
            CommandSpec::Validate { .. } => "validate",
        }
    }
}

pub struct RunContext<'a> {
    pub executor: &'a Executor,
    pub sink: &'a mut OutputSink,
}

/// Final status plus a one-line human summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub status: ExitStatus,
    pub message: String,
}

impl Outcome {
    pub fn ok(message: impl Into<String>) -> Self {
        Outcome { status: ExitStatus::Ok, message: message.into() }
    }
}

pub fn execute(inv: &Invocation, ctx: &mut RunContext) -> CliResult<Outcome> {
    for w in inv.config.validate()? {
        log::warn!("{w}");
    }
    match &inv.command {
        CommandSpec::Simulate => commands::simulate::run(inv, ctx),
        CommandSpec::Beta { snapshot } => commands::beta::run(inv, snapshot, ctx),
        CommandSpec::RainResume { snapshot, excess, rain } => commands::rain::run(inv, snapshot, *excess, rain, ctx),
        CommandSpec::BowlerDiagnose { max_eta } => commands::bowler::run(inv, *max_eta, ctx),
        CommandSpec::Validate { fault } => commands::validate::run(inv, *fault, ctx),
    }
}
