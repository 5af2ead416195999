use drift_core::nnet::{final_samples, streams, write_records_csv};
use drift_core::{mode_coverage, train, Activation, DriftConfig, Mlp, PointCloud64, RngState, SelfMask, ToyTarget, TrainConfig};
use serde::Serialize;

use crate::config::{Cell, GridFlags, MaskFlag, TrainToyConfig};
use crate::output::{create, ensure_dir, run_grid, write_cloud_csv, write_json};
use crate::CliError;

#[derive(Debug, Serialize)]
struct CellReport {
    slug: String,
    target: String,
    #[serde(flatten)]
    cell: Cell,
    status: String,
    iterations: usize,
    final_w2sq: Option<f64>,
    coverage: Option<usize>,
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a TrainToyConfig,
    cells: Vec<CellReport>,
}

struct Outcome {
    final_w2sq: Option<f64>,
    coverage: Option<usize>,
}

fn run_cell(cfg: &TrainToyConfig, target_name: &str, cell: &Cell, dir: &std::path::Path) -> Result<Outcome, CliError> {
    let target = ToyTarget::from_name(target_name).expect("validated");
    let mask = if cell.mask == MaskFlag::On { SelfMask::On } else { SelfMask::Off };
    let dc = DriftConfig::new(cell.scheme.to_scheme(cfg.sinkhorn_iters), cell.tau, cfg.kernel.cost()).with_mask(mask);
    let mut widths = vec![2];
    widths.extend(&cfg.hidden);
    widths.push(2);
    let mut init = RngState::new(cell.seed).split(streams::INIT);
    let net = Mlp::new(&widths, Activation::Relu, &mut init).map_err(|e| CliError::Config(e.to_string()))?;
    let tc = TrainConfig {
        iters: cfg.iters,
        batch: cfg.batch,
        lr: cfg.lr,
        eval_every: cfg.eval_every,
        eval_n: cfg.eval_n,
        seed: cell.seed,
    };
    let (net, records) = train(net, &target, &dc, &tc).map_err(|e| CliError::Numerical(e.to_string()))?;
    write_records_csv(&records, create(&dir.join("convergence.csv"))?)?;
    net.write_checkpoint(create(&dir.join("checkpoint.txt"))?)?;
    let (gen, _) = final_samples(&net, &target, cfg.final_samples, cell.seed).map_err(|e| CliError::Numerical(e.to_string()))?;
    let note = format!("{} generator samples after {} iterations", cfg.final_samples, cfg.iters);
    write_cloud_csv(&gen, &note, create(&dir.join("samples.csv"))?)?;
    let coverage = match (target.centers(), target.coverage_radius()) {
        (Some(c), Some(r)) => {
            let rows: Vec<Vec<f64>> = c.iter().map(|p| p.to_vec()).collect();
            let centers: PointCloud64 = PointCloud64::from_rows(&rows).map_err(|e| CliError::Numerical(e.to_string()))?;
            Some(mode_coverage(&gen, &centers, r).map_err(|e| CliError::Numerical(e.to_string()))?)
        }
        _ => None,
    };
    Ok(Outcome {
        final_w2sq: records.last().map(|r| r.w2sq),
        coverage,
    })
}

pub fn run(flags: &GridFlags, targets: Option<Vec<String>>, iters: Option<usize>) -> Result<(), CliError> {
    let cfg = TrainToyConfig::resolve(flags, targets, iters)?;
    let root = ensure_dir(&flags.outdir.join("train-toy"))?;
    let cells = cfg.cells();
    let reports = run_grid(cfg.jobs, &cells, |(target, cell)| {
        let slug = format!("{target}_{}", cell.slug());
        let outcome = ensure_dir(&root.join(&slug)).and_then(|dir| run_cell(&cfg, target, cell, &dir));
        let (status, final_w2sq, coverage) = match outcome {
            Ok(o) => ("ok".to_string(), o.final_w2sq, o.coverage),
            Err(e) => (e.to_string(), None, None),
        };
        CellReport {
            slug,
            target: target.clone(),
            cell: *cell,
            status,
            iterations: cfg.iters,
            final_w2sq,
            coverage,
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
