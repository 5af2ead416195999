use drift_core::{exact_w2sq, flow_instance, simulate, DriftConfig, RngState, SelfMask};
use serde::Serialize;

use crate::config::{Cell, GridFlags, MaskFlag, TrajectoriesConfig};
use crate::output::{create, ensure_dir, run_grid, write_json};
use crate::CliError;

#[derive(Debug, Serialize)]
struct CellReport {
    slug: String,
    #[serde(flatten)]
    cell: Cell,
    status: String,
    final_w2sq: Option<f64>,
    csv: Option<String>,
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a TrajectoriesConfig,
    cells: Vec<CellReport>,
}

pub fn run(flags: &GridFlags) -> Result<(), CliError> {
    let cfg = TrajectoriesConfig::resolve(flags)?;
    let root = ensure_dir(&flags.outdir.join("trajectories"))?;
    let (x0, y) = flow_instance(cfg.n, &mut RngState::new(cfg.seed))
        .map_err(|e| CliError::Config(e.to_string()))?;

    let cells = cfg.cells();
    let reports = run_grid(cfg.jobs, &cells, |cell| {
        let slug = cell.slug();
        let mask = if cell.mask == MaskFlag::On { SelfMask::On } else { SelfMask::Off };
        let dc = DriftConfig::new(cell.scheme.to_scheme(cfg.sinkhorn_iters), cell.tau, cfg.kernel.cost()).with_mask(mask);
        let outcome = simulate(&x0, &y, &dc, cfg.eta, cfg.steps, cfg.snapshot_every)
            .map_err(|e| CliError::Numerical(e.to_string()))
            .and_then(|traj| {
                let dir = ensure_dir(&root.join(&slug))?;
                let path = dir.join("trajectory.csv");
                traj.write_csv(create(&path)?)?;
                let w2 = exact_w2sq(traj.last(), &y).map_err(|e| CliError::Numerical(e.to_string()))?;
                Ok((w2.total_cost, format!("{slug}/trajectory.csv")))
            });
        match outcome {
            Ok((w2, csv)) => CellReport {
                slug,
                cell: *cell,
                status: "ok".into(),
                final_w2sq: Some(w2),
                csv: Some(csv),
            },
            Err(e) => CellReport {
                slug,
                cell: *cell,
                status: e.to_string(),
                final_w2sq: None,
                csv: None,
            },
        }
    })?;

    let failed: Vec<&CellReport> = reports.iter().filter(|r| r.status != "ok").collect();
    for r in &failed {
        eprintln!("cell {}: {}", r.slug, r.status);
    }
    let n_failed = failed.len();
    let io_failure = failed.iter().any(|r| r.status.starts_with("i/o"));
    write_json(&root.join("summary.json"), &Summary { config: &cfg, cells: reports })?;
    match n_failed {
        0 => Ok(()),
        _ if io_failure => Err(CliError::Io(format!("{n_failed} cell(s) could not be written"))),
        _ => Err(CliError::Numerical(format!("{n_failed} cell(s) failed; see summary.json"))),
    }
}
