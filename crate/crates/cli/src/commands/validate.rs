use serde::Serialize;

use crate::error::{CliResult, ExitStatus};
use crate::invocation::{Invocation, Outcome, RunContext};
use crate::manifest::ARTIFACT_VERSION;
use crate::output::Table;
use crate::suites::{run_all, Fault, SuiteOptions, SuiteResult};

#[derive(Serialize)]
struct ValidateOutput<'a> {
    artifact_version: &'a str,
    command: &'a str,
    paths: usize,
    seed: u64,
    passed: bool,
    suites: &'a [SuiteResult],
}

pub fn run(inv: &Invocation, fault: Option<Fault>, ctx: &mut RunContext) -> CliResult<Outcome> {
    if let Some(f) = fault {
        log::warn!("fault injected: {f:?}");
    }
    let opts = SuiteOptions { config: &inv.config, paths: inv.paths, seed: inv.seed, fault, executor: ctx.executor };
    let suites = run_all(&opts);
    let passed = suites.iter().all(|s| s.passed);

    let mut table = Table::new(["suite", "check", "measured", "tolerance", "passed"]);
    for s in &suites {
        if let Some(e) = &s.error {
            table.push(vec![
                s.suite.as_str().into(),
                e.as_str().into(),
                f64::NAN.into(),
                f64::NAN.into(),
                "false".into(),
            ]);
        }
        for c in &s.checks {
            table.push(vec![
                s.suite.as_str().into(),
                c.name.as_str().into(),
                c.measured.into(),
                c.tolerance.into(),
                if c.passed { "true" } else { "false" }.into(),
            ]);
        }
    }
    ctx.sink.write_table("validation", &table)?;
    ctx.sink.write_json(
        "validation.json",
        &ValidateOutput {
            artifact_version: ARTIFACT_VERSION,
            command: "validate",
            paths: inv.paths,
            seed: inv.seed,
            passed,
            suites: &suites,
        },
    )?;
    let lines: Vec<String> =
        suites.iter().map(|s| format!("{}: {}", s.suite, if s.passed { "pass" } else { "FAIL" })).collect();
    let message = lines.join("\n");
    Ok(Outcome { status: if passed { ExitStatus::Ok } else { ExitStatus::Validation }, message })
}
