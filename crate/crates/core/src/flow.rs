//! Forward-Euler particle flow driven by a drift field.

use std::io::{self, Write};

use ndarray::{Array2, ArrayView2, Zip};

use crate::drift::{drift_velocities, DriftConfig, Negatives};
use crate::error::{DriftError, Result};
use crate::geometry::PointCloud;
use crate::scalar::Scalar;

pub const DEFAULT_SNAPSHOT_EVERY: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<T> {
    pub step: usize,
    pub cloud: PointCloud<T>,
}

#[derive(Debug, Clone)]
pub struct FlowTrajectory<T> {
    pub snapshots: Vec<Snapshot<T>>,
    pub eta: T,
    pub steps: usize,
    pub cfg: DriftConfig<T>,
}

impl<T: Scalar> FlowTrajectory<T> {
    pub fn last(&self) -> &PointCloud<T> {
        &self.snapshots.last().expect("trajectory has an initial snapshot").cloud
    }

    /// Polyline length per particle through the recorded snapshots.
    pub fn path_lengths(&self) -> Vec<T> {
        let n = self.snapshots[0].cloud.n();
        let mut out = vec![T::zero(); n];
        for w in self.snapshots.windows(2) {
            let (a, b) = (w[0].cloud.points(), w[1].cloud.points());
            for (i, len) in out.iter_mut().enumerate() {
                let sq: T = a.row(i).iter().zip(b.row(i)).map(|(&p, &q)| (q - p) * (q - p)).sum();
                *len += sq.sqrt();
            }
        }
        out
    }

    /// Writes `step,particle_id,coord_0..coord_{d-1}` rows for every snapshot.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.snapshots[0].cloud.d();
        writeln!(w, "# coordinates are dimensionless; eta={} steps={} scheme={} tau={}", self.eta, self.steps, self.cfg.scheme, self.cfg.tau)?;
        write!(w, "step,particle_id")?;
        for k in 0..d {
            write!(w, ",coord_{k}")?;
        }
        writeln!(w)?;
        for snap in &self.snapshots {
            for (i, row) in snap.cloud.points().rows().into_iter().enumerate() {
                write!(w, "{},{}", snap.step, i)?;
                for v in row {
                    write!(w, ",{}", v.as_f64())?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Iterates `x ← x + η·V(x)` with the repulsion taken against the current cloud.
///
/// Records step 0, every `snapshot_every`-th step and the final step.
pub fn simulate<T: Scalar>(
    x0: &PointCloud<T>,
    y: &PointCloud<T>,
    cfg: &DriftConfig<T>,
    eta: T,
    steps: usize,
    snapshot_every: usize,
) -> Result<FlowTrajectory<T>> {
    if !(eta > T::zero()) || !eta.is_finite() {
        return Err(DriftError::InvalidInput(format!("step size must be positive, got {eta}")));
    }
    if steps == 0 {
        return Err(DriftError::InvalidInput("need at least one Euler step".into()));
    }
    if snapshot_every == 0 {
        return Err(DriftError::InvalidInput("snapshot stride must be positive".into()));
    }
    cfg.validate()?;
    let mut snapshots = vec![Snapshot {
        step: 0,
        cloud: x0.clone(),
    }];
    let mut current = x0.points().to_owned();
    for step in 1..=steps {
        let cloud = PointCloud::new(current.clone())?;
        let v = drift_velocities(&cloud, y, Negatives::SelfTerm, cfg)?;
        Zip::from(&mut current)
            .and(&v)
            .for_each(|x, &vel| *x += eta * vel);
        if let Some(idx) = current.iter().position(|v| !v.is_finite()) {
            return Err(DriftError::BlowUp {
                step,
                particle: idx / current.ncols(),
                scheme: cfg.scheme.to_string(),
                tau: cfg.tau.as_f64(),
            });
        }
        if step % snapshot_every == 0 || step == steps {
            snapshots.push(Snapshot {
                step,
                cloud: PointCloud::new(current.clone())?,
            });
        }
    }
    Ok(FlowTrajectory {
        snapshots,
        eta,
        steps,
        cfg: *cfg,
    })
}

/// One gradient step on `L = ½ Σ q_i ‖x_i − sg(x_i + V_i)‖²` with uniform `q_i = 1/N`,
/// preconditioned by `1/q_i`.
pub fn stop_gradient_euler_check<T: Scalar>(
    x: &PointCloud<T>,
    v: ArrayView2<'_, T>,
    eta: T,
) -> Result<PointCloud<T>> {
    if v.dim() != x.points().dim() {
        return Err(DriftError::DimensionMismatch {
            context: "velocity field shape",
            expected: x.n() * x.d(),
            got: v.len(),
        });
    }
    let q = T::one() / T::from_usize_lossy(x.n());
    let target = &x.points() + &v;
    let mut out = Array2::zeros(x.points().dim());
    Zip::from(&mut out)
        .and(x.points())
        .and(&target)
        .for_each(|o, &xi, &ti| {
            let grad = q * (xi - ti);
            *o = xi - eta * grad / q;
        });
    PointCloud::new(out)
}
