//! File configuration, flag overrides and per-subcommand resolution.

use std::fmt;
use std::path::{Path, PathBuf};

use drift_core::{CostKind, Scheme, SinkhornStop, ToyTarget};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    OneSided,
    TwoSided,
    Sinkhorn,
}

impl SchemeName {
    pub const ALL: [SchemeName; 3] = [SchemeName::OneSided, SchemeName::TwoSided, SchemeName::Sinkhorn];

    pub fn to_scheme(self, half_steps: usize) -> Scheme {
        match self {
            SchemeName::OneSided => Scheme::OneSided,
            SchemeName::TwoSided => Scheme::TwoSided,
            SchemeName::Sinkhorn => Scheme::Sinkhorn(SinkhornStop::HalfSteps(half_steps)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeName::OneSided => "one-sided",
            SchemeName::TwoSided => "two-sided",
            SchemeName::Sinkhorn => "sinkhorn",
        }
    }
}

impl fmt::Display for SchemeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MaskFlag {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// `exp(-||x-y||^2 / tau)`
    Gaussian,
    /// `exp(-||x-y|| / tau)`
    Laplacian,
}

impl Kernel {
    pub fn cost(self) -> CostKind {
        match self {
            Kernel::Gaussian => CostKind::SqEuclidean,
            Kernel::Laplacian => CostKind::Euclidean,
        }
    }
}

/// Everything a config file may set. Unset fields take subcommand defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub schemes: Option<Vec<SchemeName>>,
    pub taus: Option<Vec<f64>>,
    pub masks: Option<Vec<MaskFlag>>,
    pub sinkhorn_iters: Option<usize>,
    pub kernel: Option<Kernel>,
    pub n: Option<usize>,
    pub eta: Option<f64>,
    pub steps: Option<usize>,
    pub snapshot_every: Option<usize>,
    pub targets: Option<Vec<String>>,
    pub seeds: Option<Vec<u64>>,
    pub iters: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub eval_every: Option<usize>,
    pub eval_n: Option<usize>,
    pub final_samples: Option<usize>,
    pub hidden: Option<Vec<usize>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("bad config {}: {e}", path.display())))
    }
}

/// Grid flags shared by `trajectories` and `train-toy`. Any flag given replaces the file value.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct GridFlags {
    /// JSON config file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    pub outdir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grid cells run concurrently up to this bound.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeName>,
    /// Comma-separated temperatures.
    #[arg(long, value_delimiter = ',')]
    pub tau: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub mask: Option<MaskFlag>,
    /// Sinkhorn half-steps (odd).
    #[arg(long)]
    pub sinkhorn_iters: Option<usize>,
    #[arg(long, value_enum)]
    pub kernel: Option<Kernel>,
}

impl GridFlags {
    fn file(&self) -> Result<FileConfig, CliError> {
        self.config.as_deref().map(FileConfig::load).transpose().map(Option::unwrap_or_default)
    }
}

/// One simulated or trained cell of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub scheme: SchemeName,
    pub tau: f64,
    pub mask: MaskFlag,
    pub seed: u64,
}

impl Cell {
    /// `scheme[-mask]_tau0p010_seed0`, with τ printed to three decimals. Sinkhorn cells
    /// never carry the mask suffix since the self mask does not apply to them.
    pub fn slug(&self) -> String {
        let tau = format!("{:.3}", self.tau).replace('.', "p");
        let masked = self.mask == MaskFlag::On && self.scheme != SchemeName::Sinkhorn;
        let mask = if masked { "-mask" } else { "" };
        format!("{}{mask}_tau{tau}_seed{}", self.scheme, self.seed)
    }
}

fn check_common(taus: &[f64], schemes: &[SchemeName], half_steps: usize, jobs: usize) -> Result<(), CliError> {
    if taus.is_empty() || schemes.is_empty() {
        return Err(CliError::Config("tau and scheme lists must be non-empty".into()));
    }
    if let Some(t) = taus.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(CliError::Config(format!("tau must be positive and finite, got {t}")));
    }
    if half_steps == 0 || half_steps % 2 == 0 {
        return Err(CliError::Config(format!("--sinkhorn-iters must be odd and positive, got {half_steps}")));
    }
    if jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    Ok(())
}

/// Expands scheme × τ × mask, dropping masked Sinkhorn cells when masks come from defaults:
/// the self mask does not apply to Sinkhorn.
fn expand(schemes: &[SchemeName], taus: &[f64], masks: &[MaskFlag], seeds: &[u64], dedupe: bool) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &seed in seeds {
        for &tau in taus {
            for &scheme in schemes {
                for &mask in masks {
                    if dedupe && scheme == SchemeName::Sinkhorn && mask == MaskFlag::On && masks.len() > 1 {
                        continue;
                    }
                    cells.push(Cell { scheme, tau, mask, seed });
                }
            }
        }
    }
    cells
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoriesConfig {
    pub seed: u64,
    pub jobs: usize,
    pub schemes: Vec<SchemeName>,
    pub taus: Vec<f64>,
    pub masks: Vec<MaskFlag>,
    pub sinkhorn_iters: usize,
    pub kernel: Kernel,
    pub n: usize,
    pub eta: f64,
    pub steps: usize,
    pub snapshot_every: usize,
    pub instance: &'static str,
}

impl TrajectoriesConfig {
    pub fn resolve(flags: &GridFlags) -> Result<Self, CliError> {
        let f = flags.file()?;
        let cfg = Self {
            seed: flags.seed.or(f.seed).unwrap_or(0),
            jobs: flags.jobs.or(f.jobs).unwrap_or(1),
            schemes: flags.scheme.map(|s| vec![s]).or(f.schemes).unwrap_or(SchemeName::ALL.to_vec()),
            taus: flags.tau.clone().or(f.taus).unwrap_or(vec![0.01, 0.1, 1.0, 10.0]),
            masks: flags.mask.map(|m| vec![m]).or(f.masks).unwrap_or(vec![MaskFlag::Off, MaskFlag::On]),
            sinkhorn_iters: flags.sinkhorn_iters.or(f.sinkhorn_iters).unwrap_or(61),
            kernel: flags.kernel.or(f.kernel).unwrap_or(Kernel::Laplacian),
            n: f.n.unwrap_or(100),
            eta: f.eta.unwrap_or(0.1),
            steps: f.steps.unwrap_or(500),
            snapshot_every: f.snapshot_every.unwrap_or(drift_core::flow::DEFAULT_SNAPSHOT_EVERY),
            instance: "source N(0, 0.25 I); target two modes at (3, +-1.5), std 0.3",
        };
        check_common(&cfg.taus, &cfg.schemes, cfg.sinkhorn_iters, cfg.jobs)?;
        if cfg.n == 0 || cfg.steps == 0 || cfg.snapshot_every == 0 {
            return Err(CliError::Config("n, steps and snapshot_every must be positive".into()));
        }
        if !(cfg.eta > 0.0) || !cfg.eta.is_finite() {
            return Err(CliError::Config(format!("eta must be positive, got {}", cfg.eta)));
        }
        Ok(cfg)
    }

    pub fn cells(&self) -> Vec<Cell> {
        expand(&self.schemes, &self.taus, &self.masks, &[self.seed], true)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainToyConfig {
    pub jobs: usize,
    pub targets: Vec<String>,
    pub schemes: Vec<SchemeName>,
    pub taus: Vec<f64>,
    pub masks: Vec<MaskFlag>,
    pub seeds: Vec<u64>,
    pub sinkhorn_iters: usize,
    pub kernel: Kernel,
    pub hidden: Vec<usize>,
    pub iters: usize,
    pub batch: usize,
    pub lr: f64,
    pub eval_every: usize,
    pub eval_n: usize,
    pub final_samples: usize,
}

impl TrainToyConfig {
    pub fn resolve(flags: &GridFlags, targets: Option<Vec<String>>, iters: Option<usize>) -> Result<Self, CliError> {
        let f = flags.file()?;
        let cfg = Self {
            jobs: flags.jobs.or(f.jobs).unwrap_or(1),
            targets: targets.or(f.targets).unwrap_or(vec!["eight-gaussians".into()]),
            schemes: flags.scheme.map(|s| vec![s]).or(f.schemes).unwrap_or(SchemeName::ALL.to_vec()),
            taus: flags.tau.clone().or(f.taus).unwrap_or(vec![0.01, 0.05, 0.1]),
            masks: flags.mask.map(|m| vec![m]).or(f.masks).unwrap_or(vec![MaskFlag::On]),
            seeds: flags.seed.map(|s| vec![s]).or(f.seeds).or(f.seed.map(|s| vec![s])).unwrap_or(vec![0]),
            sinkhorn_iters: flags.sinkhorn_iters.or(f.sinkhorn_iters).unwrap_or(61),
            kernel: flags.kernel.or(f.kernel).unwrap_or(Kernel::Gaussian),
            hidden: f.hidden.unwrap_or(vec![128, 128]),
            iters: iters.or(f.iters).unwrap_or(5_000),
            batch: f.batch.unwrap_or(500),
            lr: f.lr.unwrap_or(1e-3),
            eval_every: f.eval_every.unwrap_or(100),
            eval_n: f.eval_n.unwrap_or(500),
            final_samples: f.final_samples.unwrap_or(2_000),
        };
        check_common(&cfg.taus, &cfg.schemes, cfg.sinkhorn_iters, cfg.jobs)?;
        if let Some(bad) = cfg.targets.iter().find(|t| ToyTarget::from_name(t).is_none()) {
            return Err(CliError::Config(format!(
                "unknown target `{bad}` (eight-gaussians, checkerboard, two-moons, spiral)"
            )));
        }
        if cfg.targets.is_empty() || cfg.seeds.is_empty() {
            return Err(CliError::Config("target and seed lists must be non-empty".into()));
        }
        if cfg.batch == 0 || cfg.eval_every == 0 || cfg.eval_n == 0 || cfg.final_samples == 0 {
            return Err(CliError::Config("batch, eval_every, eval_n and final_samples must be positive".into()));
        }
        if cfg.hidden.contains(&0) {
            return Err(CliError::Config("hidden widths must be positive".into()));
        }
        if !(cfg.lr > 0.0) || !cfg.lr.is_finite() {
            return Err(CliError::Config(format!("lr must be positive, got {}", cfg.lr)));
        }
        Ok(cfg)
    }

    pub fn cells(&self) -> Vec<(String, Cell)> {
        let base = expand(&self.schemes, &self.taus, &self.masks, &self.seeds, true);
        self.targets
            .iter()
            .flat_map(|t| base.iter().map(move |c| (t.clone(), *c)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slug_formats_tau_fixed_point() {
        let c = Cell {
            scheme: SchemeName::OneSided,
            tau: 0.01,
            mask: MaskFlag::On,
            seed: 3,
        };
        assert_eq!(c.slug(), "one-sided-mask_tau0p010_seed3");
        let c = Cell {
            scheme: SchemeName::Sinkhorn,
            tau: 10.0,
            mask: MaskFlag::Off,
            seed: 0,
        };
        assert_eq!(c.slug(), "sinkhorn_tau10p000_seed0");
        let c = Cell { mask: MaskFlag::On, ..c };
        assert_eq!(c.slug(), "sinkhorn_tau10p000_seed0");
    }

    #[test]
    fn default_trajectory_grid() {
        let cfg = TrajectoriesConfig::resolve(&GridFlags::default()).unwrap();
        let cells = cfg.cells();
        assert_eq!(cells.len(), 4 * 5);
        assert!(!cells.iter().any(|c| c.scheme == SchemeName::Sinkhorn && c.mask == MaskFlag::On));
    }

    #[test]
    fn flags_override_and_validate() {
        let flags = GridFlags {
            tau: Some(vec![1.0]),
            scheme: Some(SchemeName::Sinkhorn),
            ..GridFlags::default()
        };
        assert_eq!(TrajectoriesConfig::resolve(&flags).unwrap().cells().len(), 1);
        let even = GridFlags {
            sinkhorn_iters: Some(30),
            ..GridFlags::default()
        };
        assert!(matches!(TrajectoriesConfig::resolve(&even), Err(CliError::Config(_))));
        let neg = GridFlags {
            tau: Some(vec![-1.0]),
            ..GridFlags::default()
        };
        assert!(TrajectoriesConfig::resolve(&neg).is_err());
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(serde_json::from_str::<FileConfig>(r#"{"tau": [0.1]}"#).is_err());
        let f: FileConfig = serde_json::from_str(r#"{"taus": [0.1], "kernel": "laplacian"}"#).unwrap();
        assert_eq!(f.kernel, Some(Kernel::Laplacian));
    }
}
