use std::path::{Path, PathBuf};

use drift_core::nnet::streams;
use drift_core::metrics::exact_w2sq_with_cap;
use drift_core::{mode_coverage, sample, sinkhorn_divergence, DivergenceMode, PointCloud64, RngState, ToyTarget};
use ndarray::Array2;
use serde::Serialize;

use crate::config::Kernel;
use crate::output::write_json;
use crate::CliError;

#[derive(Debug, clap::Args)]
#[command(group(clap::ArgGroup::new("reference").required(true).args(["target", "target_file"])))]
pub struct EvalArgs {
    /// Generated cloud CSV (samples or trajectory file; `coord_*` columns are used).
    #[arg(long)]
    pub generated: PathBuf,
    /// Named toy target sampled with `--seed`.
    #[arg(long)]
    pub target: Option<String>,
    /// Reference cloud CSV.
    #[arg(long)]
    pub target_file: Option<PathBuf>,
    /// Comma-separated temperatures for the Sinkhorn divergence.
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    pub tau: Vec<f64>,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub kernel: Kernel,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Both clouds are truncated to their first min(N, cap) rows.
    #[arg(long, default_value_t = 2_000)]
    pub cap: usize,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Divergence {
    tau: f64,
    s_tau: f64,
    ot_xy: f64,
    ot_xx: f64,
    ot_yy: f64,
}

#[derive(Debug, Serialize)]
struct Coverage {
    covered: usize,
    modes: usize,
    radius: f64,
}

#[derive(Debug, Serialize)]
struct Report {
    generated: String,
    reference: String,
    n: usize,
    w2sq: f64,
    kernel: Kernel,
    divergence: Vec<Divergence>,
    coverage: Option<Coverage>,
}

/// Reads the `coord_*` columns (or every column if none is so named). Files with a `step`
/// column keep only the rows of the last step.
pub fn read_cloud(path: &Path) -> Result<PointCloud64, CliError> {
    let where_ = |line: u64, msg: String| CliError::Config(format!("{}:{line}: {msg}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| where_(1, e.to_string()))?.clone();
    let mut cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("coord_"))
        .map(|(i, _)| i)
        .collect();
    if cols.is_empty() {
        cols = (0..headers.len()).collect();
    }
    let step_col = headers.iter().position(|h| h == "step");
    let mut rows: Vec<(f64, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            where_(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<f64, CliError> {
            let s = rec.get(i).unwrap_or("").trim();
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(where_(line, format!("column `{}` is not a finite number: `{s}`", &headers[i]))),
            }
        };
        let step = step_col.map(field).transpose()?.unwrap_or(0.0);
        let vals = cols.iter().map(|&i| field(i)).collect::<Result<Vec<_>, _>>()?;
        rows.push((step, vals));
    }
    let last = rows.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    let pts: Vec<f64> = rows.iter().filter(|r| r.0 == last).flat_map(|r| r.1.iter().copied()).collect();
    let n = pts.len() / cols.len();
    if n == 0 {
        return Err(CliError::Config(format!("{}: no data rows", path.display())));
    }
    let arr = Array2::from_shape_vec((n, cols.len()), pts).expect("rectangular");
    PointCloud64::new(arr).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn head(cloud: &PointCloud64, k: usize) -> PointCloud64 {
    PointCloud64::new(cloud.points().slice(ndarray::s![..k, ..]).to_owned()).expect("non-empty")
}

pub fn run(args: &EvalArgs) -> Result<(), CliError> {
    if args.cap == 0 {
        return Err(CliError::Config("--cap must be positive".into()));
    }
    if let Some(t) = args.tau.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(CliError::Config(format!("tau must be positive and finite, got {t}")));
    }
    let gen = read_cloud(&args.generated)?;
    let (reference, label, toy) = match (&args.target, &args.target_file) {
        (Some(name), _) => {
            let toy = ToyTarget::from_name(name).ok_or_else(|| CliError::Config(format!("unknown target `{name}`")))?;
            let n = gen.n().min(args.cap);
            let mut rng = RngState::new(args.seed).split(streams::FINAL_TARGET);
            let y = sample(&toy, n, &mut rng).map_err(|e| CliError::Config(e.to_string()))?;
            (y, name.clone(), Some(toy))
        }
        (None, Some(path)) => (read_cloud(path)?, path.display().to_string(), None),
        (None, None) => unreachable!("clap requires a reference"),
    };
    if gen.d() != reference.d() {
        return Err(CliError::Config(format!(
            "dimension mismatch: generated has {} coordinates, reference {}",
            gen.d(),
            reference.d()
        )));
    }
    let n = gen.n().min(reference.n()).min(args.cap);
    let (x, y) = (head(&gen, n), head(&reference, n));
    let numerical = |e: drift_core::DriftError| CliError::Numerical(e.to_string());
    let w2sq = exact_w2sq_with_cap(&x, &y, args.cap).map_err(numerical)?.total_cost;
    let mut divergence = Vec::new();
    for &tau in &args.tau {
        let d = sinkhorn_divergence(&x, &y, tau, DivergenceMode::Converged, args.kernel.cost()).map_err(numerical)?;
        divergence.push(Divergence {
            tau,
            s_tau: d.s_tau,
            ot_xy: d.ot_xy,
            ot_xx: d.ot_xx,
            ot_yy: d.ot_yy,
        });
    }
    let coverage = match toy.as_ref().and_then(|t| Some((t.centers()?, t.coverage_radius()?))) {
        Some((centers, radius)) => {
            let rows: Vec<Vec<f64>> = centers.iter().map(|p| p.to_vec()).collect();
            let c = PointCloud64::from_rows(&rows).map_err(numerical)?;
            Some(Coverage {
                covered: mode_coverage(&x, &c, radius).map_err(numerical)?,
                modes: centers.len(),
                radius,
            })
        }
        None => None,
    };
    let report = Report {
        generated: args.generated.display().to_string(),
        reference: label,
        n,
        w2sq,
        kernel: args.kernel,
        divergence,
        coverage,
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(())
}
