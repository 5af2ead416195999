//! Point clouds, pairwise costs and Gibbs kernels.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::coupling::{CouplingMatrix, MarginalStatus};
use crate::error::{DriftError, Result};
use crate::scalar::Scalar;

/// Diagonal penalty used for self-distance masking.
pub const DEFAULT_MASK_PENALTY: f64 = 1e6;

/// Uniform empirical measure over `n` points in `R^d`, stored row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    points: Array2<T>,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(points: Array2<T>) -> Result<Self> {
        let (n, d) = points.dim();
        if n == 0 || d == 0 {
            return Err(DriftError::InvalidInput(format!(
                "point cloud must be non-empty, got {n}x{d}"
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(DriftError::NonFinite("point cloud"));
        }
        Ok(Self { points })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(DriftError::InvalidInput(format!(
                "row {i} has {} coordinates, expected {d}",
                r.len()
            )));
        }
        let flat: Vec<T> = rows.iter().flatten().copied().collect();
        let points = Array2::from_shape_vec((n, d), flat)
            .map_err(|e| DriftError::InvalidInput(e.to_string()))?;
        Self::new(points)
    }

    /// Points given as `f64` rows, converted to `T`.
    pub fn from_f64_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let conv: Vec<Vec<T>> = rows
            .iter()
            .map(|r| r.iter().map(|&v| T::lit(v)).collect())
            .collect();
        Self::from_rows(&conv)
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn d(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> ArrayView2<'_, T> {
        self.points.view()
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, T> {
        self.points.row(i)
    }

    pub fn into_inner(self) -> Array2<T> {
        self.points
    }

    pub fn mean(&self) -> Vec<T> {
        let n = T::from_usize_lossy(self.n());
        self.points
            .sum_axis(Axis(0))
            .iter()
            .map(|&s| s / n)
            .collect()
    }

    /// Cloud with rows reordered so that row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n() {
            return Err(DriftError::DimensionMismatch {
                context: "permutation length",
                expected: self.n(),
                got: perm.len(),
            });
        }
        Ok(Self {
            points: self.points.select(Axis(0), perm),
        })
    }

    pub fn translated(&self, shift: &[T]) -> Result<Self> {
        if shift.len() != self.d() {
            return Err(DriftError::DimensionMismatch {
                context: "translation vector",
                expected: self.d(),
                got: shift.len(),
            });
        }
        let mut points = self.points.clone();
        for mut row in points.rows_mut() {
            for (v, &s) in row.iter_mut().zip(shift) {
                *v += s;
            }
        }
        Self::new(points)
    }

    pub fn to_rows_f64(&self) -> Vec<Vec<f64>> {
        self.points
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.as_f64()).collect())
            .collect()
    }
}

/// Ground cost between points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    /// `½‖x−y‖²`
    SqEuclideanHalf,
    /// `‖x−y‖²`, the Gaussian kernel.
    SqEuclidean,
    /// `‖x−y‖`, the Laplacian kernel.
    Euclidean,
}

impl CostKind {
    #[inline]
    pub fn eval<T: Scalar>(self, x: ArrayView1<'_, T>, y: ArrayView1<'_, T>) -> T {
        let mut sq = T::zero();
        for (&a, &b) in x.iter().zip(y.iter()) {
            let diff = a - b;
            sq += diff * diff;
        }
        self.finish(sq)
    }

    #[inline]
    fn eval_slices<T: Scalar>(self, x: &[T], y: &[T]) -> T {
        let mut sq = T::zero();
        for (&a, &b) in x.iter().zip(y) {
            let diff = a - b;
            sq += diff * diff;
        }
        self.finish(sq)
    }

    #[inline]
    fn finish<T: Scalar>(self, sq: T) -> T {
        match self {
            CostKind::SqEuclideanHalf => T::lit(0.5) * sq,
            CostKind::SqEuclidean => sq,
            CostKind::Euclidean => sq.sqrt(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CostKind::SqEuclideanHalf => "sq-euclidean-half",
            CostKind::SqEuclidean => "sq-euclidean",
            CostKind::Euclidean => "euclidean",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<T> {
    values: Array2<T>,
    kind: CostKind,
}

impl<T: Scalar> CostMatrix<T> {
    pub fn from_values(values: Array2<T>, kind: CostKind) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(DriftError::InvalidInput(
                "cost entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self { values, kind })
    }

    pub fn values(&self) -> ArrayView2<'_, T> {
        self.values.view()
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// `values[i][j] = cost(x_i, y_j)`, one fixed expression per entry.
pub fn pairwise_cost<T: Scalar>(
    x: &PointCloud<T>,
    y: &PointCloud<T>,
    kind: CostKind,
) -> Result<CostMatrix<T>> {
    if x.d() != y.d() {
        return Err(DriftError::DimensionMismatch {
            context: "pairwise_cost point dimension",
            expected: x.d(),
            got: y.d(),
        });
    }
    let (xs, ys) = (x.points.as_standard_layout(), y.points.as_standard_layout());
    let (xs, ys) = (xs.as_slice().expect("standard layout"), ys.as_slice().expect("standard layout"));
    let d = x.d();
    let mut values = Array2::zeros((x.n(), y.n()));
    for (xi, row) in xs.chunks_exact(d).zip(values.rows_mut()) {
        if d == 2 {
            let (x0, x1) = (xi[0], xi[1]);
            for (yj, c) in ys.chunks_exact(2).zip(row) {
                let (d0, d1) = (x0 - yj[0], x1 - yj[1]);
                *c = kind.finish(d0 * d0 + d1 * d1);
            }
        } else {
            for (yj, c) in ys.chunks_exact(d).zip(row) {
                *c = kind.eval_slices(xi, yj);
            }
        }
    }
    Ok(CostMatrix { values, kind })
}

/// Adds `penalty` to every diagonal entry of a square cost matrix.
pub fn mask_self_distances<T: Scalar>(cost: &CostMatrix<T>, penalty: T) -> Result<CostMatrix<T>> {
    let (n, m) = cost.dim();
    if n != m {
        return Err(DriftError::DimensionMismatch {
            context: "mask_self_distances requires a square matrix",
            expected: n,
            got: m,
        });
    }
    if !penalty.is_finite() || penalty < T::zero() {
        return Err(DriftError::InvalidInput(format!(
            "mask penalty must be finite and non-negative, got {penalty}"
        )));
    }
    let mut values = cost.values.clone();
    for i in 0..n {
        values[[i, i]] += penalty;
    }
    Ok(CostMatrix {
        values,
        kind: cost.kind,
    })
}

/// Entrywise `exp(-C/τ)`, held in log domain as `-C/τ`.
pub fn gibbs_kernel<T: Scalar>(cost: &CostMatrix<T>, tau: T) -> Result<CouplingMatrix<T>> {
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(DriftError::InvalidInput(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let log_values = cost.values.mapv(|c| -c / tau);
    Ok(CouplingMatrix::from_log(log_values, MarginalStatus::Raw, 0))
}
