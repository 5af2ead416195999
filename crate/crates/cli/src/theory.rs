use std::path::Path;

use drift_core::theory::{run_suite, CheckResult, SuiteOptions};
use serde::Serialize;

use crate::output::{ensure_dir, write_json};
use crate::CliError;

#[derive(Serialize)]
struct Report<'a> {
    seed: u64,
    only: &'a Option<Vec<String>>,
    pass: bool,
    checks: &'a [CheckResult],
}

pub fn run(outdir: &Path, seed: u64, only: Option<Vec<String>>, fault: Option<&str>) -> Result<(), CliError> {
    let flip_f1_sign = match fault {
        None => false,
        Some("flip-f1") => true,
        Some(other) => return Err(CliError::Config(format!("unknown fault `{other}` (flip-f1)"))),
    };
    let opts = SuiteOptions {
        only: only.clone(),
        flip_f1_sign,
        seed,
    };
    let checks = run_suite(&opts).map_err(|e| CliError::Config(e.to_string()))?;
    let pass = checks.iter().all(|c| c.pass);
    for c in &checks {
        println!("{} {}", if c.pass { "PASS" } else { "FAIL" }, c.name);
    }
    let dir = ensure_dir(&outdir.join("theory"))?;
    write_json(
        &dir.join("report.json"),
        &Report {
            seed,
            only: &only,
            pass,
            checks: &checks,
        },
    )?;
    if pass {
        Ok(())
    } else {
        let names: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        Err(CliError::Theory(names.join(", ")))
    }
}
