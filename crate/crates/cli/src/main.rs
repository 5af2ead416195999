use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod eval;
mod output;
mod theory;
mod trajectories;
mod train_toy;

use config::GridFlags;

/// Drift-field experiments: particle trajectories, toy generator training, metrics and
/// theory checks.
#[derive(Parser)]
#[command(name = "sinkdrift", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Particle flows over a scheme × τ × mask grid.
    Trajectories {
        #[command(flatten)]
        grid: GridFlags,
    },
    /// Generator training over a target × scheme × τ grid.
    TrainToy {
        #[command(flatten)]
        grid: GridFlags,
        /// Comma-separated toy targets.
        #[arg(long, value_delimiter = ',')]
        target: Option<Vec<String>>,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Runs the identity and counterexample checks; exits 3 if any fails.
    Theory {
        #[arg(long, default_value = "runs")]
        outdir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated check names.
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<String>>,
        /// Test hook: corrupt the counterexample residual.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// W2², Sinkhorn divergence and mode coverage of a generated cloud.
    Eval(eval::EvalArgs),
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Theory(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Theory(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Theory(m) => write!(f, "theory check failed: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Trajectories { grid } => trajectories::run(&grid),
        Command::TrainToy { grid, target, iters } => train_toy::run(&grid, target, iters),
        Command::Theory {
            outdir,
            seed,
            only,
            inject_fault,
        } => theory::run(&outdir, seed, only, inject_fault.as_deref()),
        Command::Eval(args) => eval::run(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sinkdrift: {e}");
            ExitCode::from(e.code())
        }
    }
}
