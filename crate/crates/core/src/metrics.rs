//! Evaluation metrics: exact empirical W2², Sinkhorn divergence and mode coverage.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::coupling::{sinkhorn, Marginals, SinkhornStop};
use crate::error::{DriftError, Result};
use crate::geometry::{gibbs_kernel, pairwise_cost, CostKind, CostMatrix, PointCloud};
use crate::scalar::Scalar;

pub const DEFAULT_ASSIGNMENT_CAP: usize = 2_000;

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult<T> {
    /// `permutation[i]` is the column matched to row `i`.
    pub permutation: Vec<usize>,
    pub total_cost: T,
}

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Shortest augmenting path with row/column potentials (Kuhn–Munkres in its
/// O(n³) form). Exact for any finite real costs.
pub fn solve_assignment<T: Scalar>(cost: ArrayView2<'_, T>) -> Result<Vec<usize>> {
    let (n, m) = cost.dim();
    if n != m {
        return Err(DriftError::DimensionMismatch {
            context: "assignment needs a square cost matrix",
            expected: n,
            got: m,
        });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(DriftError::NonFinite("assignment cost"));
    }
    let inf = T::infinity();
    // 1-based columns; column 0 is a virtual root.
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        minv.fill(inf);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[matched_row[j] - 1] = j - 1;
    }
    Ok(perm)
}

/// `(1/N) Σ_i C[i, σ(i)]`, summed in row order.
pub fn assignment_cost<T: Scalar>(cost: ArrayView2<'_, T>, perm: &[usize]) -> T {
    let mut total = T::zero();
    for (i, &j) in perm.iter().enumerate() {
        total += cost[[i, j]];
    }
    total / T::from_usize_lossy(perm.len())
}

/// Exact squared 2-Wasserstein distance between equal-size uniform clouds
/// (squared Euclidean ground cost, divided by N).
pub fn exact_w2sq<T: Scalar>(x: &PointCloud<T>, y: &PointCloud<T>) -> Result<AssignmentResult<T>> {
    exact_w2sq_with_cap(x, y, DEFAULT_ASSIGNMENT_CAP)
}

pub fn exact_w2sq_with_cap<T: Scalar>(
    x: &PointCloud<T>,
    y: &PointCloud<T>,
    cap: usize,
) -> Result<AssignmentResult<T>> {
    if x.n() != y.n() {
        return Err(DriftError::DimensionMismatch {
            context: "exact_w2sq needs equal sizes",
            expected: x.n(),
            got: y.n(),
        });
    }
    if x.n() > cap {
        return Err(DriftError::CapExceeded { size: x.n(), cap });
    }
    let c = pairwise_cost(x, y, CostKind::SqEuclidean)?;
    let permutation = solve_assignment(c.values())?;
    let total_cost = assignment_cost(c.values(), &permutation);
    Ok(AssignmentResult {
        permutation,
        total_cost,
    })
}

/// Sinkhorn plan used for each OT term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DivergenceMode {
    /// Tolerance mode with the long-run cap.
    Converged,
    Level(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DivergenceValue<T> {
    pub s_tau: T,
    pub ot_xy: T,
    pub ot_xx: T,
    pub ot_yy: T,
    pub iterations: usize,
}

fn transport_cost<T: Scalar>(c: &CostMatrix<T>, tau: T, stop: SinkhornStop) -> Result<(T, usize)> {
    let (n, m) = c.dim();
    let k = gibbs_kernel(c, tau)?;
    let pi = sinkhorn(&k, &Marginals::uniform(n, m)?, stop)?;
    let mut total = T::zero();
    for (&cij, &lp) in c.values().iter().zip(pi.log_values().iter()) {
        total += cij * lp.exp();
    }
    Ok((total, pi.iterations_used()))
}

/// `S = OT(x,y) − ½OT(x,x) − ½OT(y,y)` with `OT = ⟨C, π⟩` (transport cost only).
pub fn sinkhorn_divergence<T: Scalar>(
    x: &PointCloud<T>,
    y: &PointCloud<T>,
    tau: T,
    mode: DivergenceMode,
    cost: CostKind,
) -> Result<DivergenceValue<T>> {
    let stop = match mode {
        DivergenceMode::Converged => SinkhornStop::long_run(),
        DivergenceMode::Level(0) => {
            return Err(DriftError::InvalidInput("level must be at least 1".into()))
        }
        DivergenceMode::Level(l) => SinkhornStop::HalfSteps(l),
    };
    let (ot_xy, i1) = transport_cost(&pairwise_cost(x, y, cost)?, tau, stop)?;
    let (ot_xx, i2) = transport_cost(&pairwise_cost(x, x, cost)?, tau, stop)?;
    let (ot_yy, i3) = transport_cost(&pairwise_cost(y, y, cost)?, tau, stop)?;
    let half = T::lit(0.5);
    Ok(DivergenceValue {
        s_tau: ot_xy - half * ot_xx - half * ot_yy,
        ot_xy,
        ot_xx,
        ot_yy,
        iterations: i1.max(i2).max(i3),
    })
}

/// Number of centers with at least `max(1, N/(4·K))` points within `radius`.
pub fn mode_coverage<T: Scalar>(x: &PointCloud<T>, centers: &PointCloud<T>, radius: T) -> Result<usize> {
    if !(radius > T::zero()) {
        return Err(DriftError::InvalidInput(format!("radius must be positive, got {radius}")));
    }
    if x.d() != centers.d() {
        return Err(DriftError::DimensionMismatch {
            context: "mode_coverage dimension",
            expected: centers.d(),
            got: x.d(),
        });
    }
    let threshold = (x.n() as f64 / (4.0 * centers.n() as f64)).max(1.0);
    let r2 = radius * radius;
    let covered = (0..centers.n())
        .filter(|&k| {
            let c = centers.point(k);
            let hits = (0..x.n())
                .filter(|&i| {
                    let d2: T = x.point(i).iter().zip(c.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum();
                    d2 <= r2
                })
                .count();
            hits as f64 >= threshold
        })
        .count();
    Ok(covered)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use ndarray::{array, Array2};
    use rand::Rng;

    fn cloud(rows: Vec<Vec<f64>>) -> PointCloud<f64> {
        PointCloud::from_rows(&rows).unwrap()
    }

    fn random_cloud(n: usize, d: usize, rng: &mut RngState) -> PointCloud<f64> {
        PointCloud::new(Array2::from_shape_fn((n, d), |_| rng.random_range(0.0..1.0))).unwrap()
    }

    #[test]
    fn identical_clouds_cost_zero() {
        let x = cloud(vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![-1.0, 0.5]]);
        let r = exact_w2sq(&x, &x).unwrap();
        assert_eq!(r.total_cost, 0.0);
        assert_eq!(r.permutation, vec![0, 1, 2]);
    }

    #[test]
    fn relabeled_line_swaps() {
        let x = cloud(vec![vec![0.0], vec![1.0]]);
        let y = cloud(vec![vec![1.0], vec![0.0]]);
        let r = exact_w2sq(&x, &y).unwrap();
        assert_eq!(r.total_cost, 0.0);
        assert_eq!(r.permutation, vec![1, 0]);
    }

    #[test]
    fn assignment_errors() {
        let x = cloud(vec![vec![0.0], vec![1.0]]);
        let y = cloud(vec![vec![1.0]]);
        assert!(exact_w2sq(&x, &y).is_err());
        assert!(matches!(
            exact_w2sq_with_cap(&x, &x, 1),
            Err(DriftError::CapExceeded { size: 2, cap: 1 })
        ));
        assert!(solve_assignment(array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn w2_is_symmetric() {
        let mut rng = RngState::new(5);
        for _ in 0..10 {
            let x = random_cloud(9, 2, &mut rng);
            let y = random_cloud(9, 2, &mut rng);
            let a = exact_w2sq(&x, &y).unwrap().total_cost;
            let b = exact_w2sq(&y, &x).unwrap().total_cost;
            assert!((a - b).abs() < 1e-14);
            assert!(a > 0.0);
        }
    }

    #[test]
    fn assignment_handles_negative_and_tied_costs() {
        let c = array![[-1.0, -1.0, 0.0], [-1.0, -1.0, 0.0], [0.0, 0.0, -5.0]];
        let p = solve_assignment(c.view()).unwrap();
        assert_eq!(assignment_cost(c.view(), &p) * 3.0, -7.0);
    }

    #[test]
    fn divergence_of_identical_clouds_is_zero() {
        let mut rng = RngState::new(1);
        let x = random_cloud(6, 2, &mut rng);
        let d = sinkhorn_divergence(&x, &x, 0.1, DivergenceMode::Converged, CostKind::SqEuclideanHalf).unwrap();
        assert!(d.s_tau.abs() < 1e-9);
    }

    #[test]
    fn divergence_single_atoms() {
        let x = cloud(vec![vec![0.0, 0.0]]);
        let y = cloud(vec![vec![1.0, 2.0]]);
        let d = sinkhorn_divergence(&x, &y, 0.3, DivergenceMode::Converged, CostKind::SqEuclideanHalf).unwrap();
        assert_eq!(d.ot_xy, 2.5);
        assert_eq!(d.ot_xx, 0.0);
        assert_eq!(d.ot_yy, 0.0);
        assert_eq!(d.s_tau, 2.5);
        let l = sinkhorn_divergence(&x, &y, 0.3, DivergenceMode::Level(1), CostKind::SqEuclideanHalf).unwrap();
        assert_eq!(l.s_tau, 2.5);
    }

    #[test]
    fn divergence_approaches_w2_at_low_tau() {
        let mut rng = RngState::new(77);
        let x = random_cloud(5, 2, &mut rng);
        let y = random_cloud(5, 2, &mut rng);
        let w2 = exact_w2sq(&x, &y).unwrap().total_cost;
        let s = |tau| {
            sinkhorn_divergence(&x, &y, tau, DivergenceMode::Converged, CostKind::SqEuclidean)
                .unwrap()
                .s_tau
        };
        let (lo, hi) = (s(0.05), s(10.0));
        assert!((lo - w2).abs() <= 0.1 * w2, "S={lo} W2={w2}");
        assert!((hi - w2).abs() > (lo - w2).abs());
    }

    #[test]
    fn coverage_examples() {
        let centers: Vec<Vec<f64>> = (0..8)
            .map(|k| {
                let a = std::f64::consts::PI * k as f64 / 4.0;
                vec![2.0 * a.cos(), 2.0 * a.sin()]
            })
            .collect();
        let c = cloud(centers.clone());
        assert_eq!(mode_coverage(&c, &c, 0.5).unwrap(), 8);
        let collapsed = cloud(vec![centers[3].clone(); 40]);
        assert_eq!(mode_coverage(&collapsed, &c, 0.5).unwrap(), 1);
        assert!(mode_coverage(&collapsed, &c, 0.0).is_err());
    }
}
