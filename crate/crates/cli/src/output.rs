//! Directory layout, JSON/CSV writers and the bounded parallel grid runner.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use drift_core::PointCloud64;
use rayon::prelude::*;
use serde::Serialize;

use crate::CliError;

pub fn ensure_dir(path: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

pub fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// `sample_id,coord_0..` rows after a convention comment line.
pub fn write_cloud_csv<W: Write>(cloud: &PointCloud64, note: &str, mut w: W) -> std::io::Result<()> {
    writeln!(w, "# coordinates are dimensionless; {note}")?;
    write!(w, "sample_id")?;
    for k in 0..cloud.d() {
        write!(w, ",coord_{k}")?;
    }
    writeln!(w)?;
    for (i, row) in cloud.points().rows().into_iter().enumerate() {
        write!(w, "{i}")?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

/// Runs `f` over `items` on at most `jobs` threads, keeping input order in the result.
pub fn run_grid<I, O, F>(jobs: usize, items: &[I], f: F) -> Result<Vec<O>, CliError>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> O + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}
