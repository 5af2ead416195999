//! Cross-minus-self drift fields.
//!
//! Every scheme produces row-stochastic weights `P_pos`, `P_neg` from Gibbs kernels and
//! returns `V = P_pos·Y_pos − P_neg·Y_neg`. The schemes differ only in how the kernel
//! is normalized: a row softmax, the geometric mean of row and column softmax, or
//! Sinkhorn scaling followed by a row normalization.

use std::fmt;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::coupling::{
    row_normalize, sinkhorn, sinkhorn_row_weights, two_sided_normalize, CouplingMatrix, MarginalStatus,
    Marginals, SinkhornStop,
};
use crate::error::{DriftError, Result};
use crate::geometry::{gibbs_kernel, mask_self_distances, pairwise_cost, CostKind, PointCloud, DEFAULT_MASK_PENALTY};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Scheme {
    OneSided,
    TwoSided,
    Sinkhorn(SinkhornStop),
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::OneSided => "one-sided",
            Scheme::TwoSided => "two-sided",
            Scheme::Sinkhorn(_) => "sinkhorn",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Sinkhorn(SinkhornStop::HalfSteps(t)) => write!(f, "sinkhorn(T={t})"),
            Scheme::Sinkhorn(SinkhornStop::Tolerance { tol, .. }) => write!(f, "sinkhorn(tol={tol:e})"),
            s => f.write_str(s.name()),
        }
    }
}

/// Diagonal masking of the self cost matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelfMask {
    Off,
    /// Mask for the one- and two-sided schemes; Sinkhorn stays unmasked.
    On,
    /// Mask for every scheme, Sinkhorn included.
    Forced,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftConfig<T> {
    pub scheme: Scheme,
    pub tau: T,
    pub cost: CostKind,
    pub mask: SelfMask,
    pub mask_penalty: T,
}

impl<T: Scalar> DriftConfig<T> {
    pub fn new(scheme: Scheme, tau: T, cost: CostKind) -> Self {
        Self {
            scheme,
            tau,
            cost,
            mask: SelfMask::Off,
            mask_penalty: T::lit(DEFAULT_MASK_PENALTY),
        }
    }

    pub fn with_mask(mut self, mask: SelfMask) -> Self {
        self.mask = mask;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > T::zero()) || !self.tau.is_finite() {
            return Err(DriftError::InvalidInput(format!(
                "temperature must be positive, got {}",
                self.tau
            )));
        }
        if let Scheme::Sinkhorn(SinkhornStop::HalfSteps(t)) = self.scheme {
            if t == 0 || t % 2 == 0 {
                return Err(DriftError::InvalidInput(format!(
                    "sinkhorn half-step count must be odd and positive, got {t}"
                )));
            }
        }
        Ok(())
    }

    /// Whether the self cost matrix gets its diagonal penalized.
    pub fn masks_self(&self) -> bool {
        match (self.mask, self.scheme) {
            (SelfMask::Off, _) => false,
            (SelfMask::On, Scheme::Sinkhorn(_)) => false,
            (SelfMask::On, _) => true,
            (SelfMask::Forced, _) => true,
        }
    }
}

/// Negative samples for the repulsion term.
#[derive(Debug, Clone, Copy)]
pub enum Negatives<'a, T> {
    /// The evaluation cloud itself.
    SelfTerm,
    Samples(&'a PointCloud<T>),
}

#[derive(Debug, Clone)]
pub struct DriftField<T> {
    velocities: Array2<T>,
    scheme: Scheme,
    masked_self: bool,
    tau: T,
    p_pos: CouplingMatrix<T>,
    p_neg: CouplingMatrix<T>,
}

impl<T: Scalar> DriftField<T> {
    pub fn velocities(&self) -> ArrayView2<'_, T> {
        self.velocities.view()
    }

    pub fn into_velocities(self) -> Array2<T> {
        self.velocities
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn masked_self(&self) -> bool {
        self.masked_self
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    /// Barycentric weights of the attraction term.
    pub fn positive_weights(&self) -> &CouplingMatrix<T> {
        &self.p_pos
    }

    /// Barycentric weights of the repulsion term.
    pub fn negative_weights(&self) -> &CouplingMatrix<T> {
        &self.p_neg
    }

    /// Largest absolute velocity component.
    pub fn max_norm(&self) -> T {
        self.velocities.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn n(&self) -> usize {
        self.velocities.nrows()
    }
}

/// `P·Y` with `P` materialized from log domain.
pub fn barycentric_projection<T: Scalar>(p: &CouplingMatrix<T>, y: &PointCloud<T>) -> Result<Array2<T>> {
    let (_, m) = p.dim();
    if m != y.n() {
        return Err(DriftError::DimensionMismatch {
            context: "coupling columns vs target points",
            expected: m,
            got: y.n(),
        });
    }
    Ok(p.to_linear().dot(&y.points()))
}

fn tag(err: DriftError, scheme: &Scheme) -> DriftError {
    match err {
        DriftError::DegenerateSupport { axis, index, .. } => DriftError::DegenerateSupport {
            axis,
            index,
            scheme: Some(scheme.name()),
        },
        e => e,
    }
}

fn normalize<T: Scalar>(k: &CouplingMatrix<T>, scheme: &Scheme) -> Result<CouplingMatrix<T>> {
    let (n, m) = k.dim();
    let out = match scheme {
        Scheme::OneSided => row_normalize(k),
        Scheme::TwoSided => two_sided_normalize(k),
        Scheme::Sinkhorn(stop) => {
            let marg = Marginals::uniform(n, m)?;
            sinkhorn(k, &marg, *stop).and_then(|pi| row_normalize(&pi))
        }
    };
    out.map_err(|e| tag(e, scheme))
}

/// Drift field `V(x_i)` for every point of `x`.
pub fn drift_field<T: Scalar>(
    x: &PointCloud<T>,
    y_pos: &PointCloud<T>,
    y_neg: Negatives<'_, T>,
    cfg: &DriftConfig<T>,
) -> Result<DriftField<T>> {
    cfg.validate()?;
    let c_pos = pairwise_cost(x, y_pos, cfg.cost)?;
    let p_pos = normalize(&gibbs_kernel(&c_pos, cfg.tau)?, &cfg.scheme)?;

    let (neg_cloud, is_self) = match y_neg {
        Negatives::SelfTerm => (x, true),
        Negatives::Samples(y) => (y, false),
    };
    let masked_self = is_self && cfg.masks_self();
    let mut c_neg = pairwise_cost(x, neg_cloud, cfg.cost)?;
    if masked_self {
        c_neg = mask_self_distances(&c_neg, cfg.mask_penalty)?;
    }
    let p_neg = normalize(&gibbs_kernel(&c_neg, cfg.tau)?, &cfg.scheme)?;

    let velocities = barycentric_projection(&p_pos, y_pos)? - barycentric_projection(&p_neg, neg_cloud)?;
    debug_assert!(velocities.iter().all(|v| v.is_finite()));
    if velocities.iter().any(|v| !v.is_finite()) {
        return Err(DriftError::NonFinite("drift field"));
    }
    Ok(DriftField {
        velocities,
        scheme: cfg.scheme,
        masked_self,
        tau: cfg.tau,
        p_pos,
        p_neg,
    })
}

/// Velocities only, as in [`drift_field`], with weights kept in linear domain.
///
/// Used by the flow and training loops, which never look at the weight matrices.
pub fn drift_velocities<T: Scalar>(
    x: &PointCloud<T>,
    y_pos: &PointCloud<T>,
    y_neg: Negatives<'_, T>,
    cfg: &DriftConfig<T>,
) -> Result<Array2<T>> {
    cfg.validate()?;
    let w_pos = linear_weights(&gibbs_kernel(&pairwise_cost(x, y_pos, cfg.cost)?, cfg.tau)?, &cfg.scheme)?;
    let (neg_cloud, is_self) = match y_neg {
        Negatives::SelfTerm => (x, true),
        Negatives::Samples(y) => (y, false),
    };
    let mut c_neg = pairwise_cost(x, neg_cloud, cfg.cost)?;
    if is_self && cfg.masks_self() {
        c_neg = mask_self_distances(&c_neg, cfg.mask_penalty)?;
    }
    let w_neg = linear_weights(&gibbs_kernel(&c_neg, cfg.tau)?, &cfg.scheme)?;
    let v = w_pos.dot(&y_pos.points()) - w_neg.dot(&neg_cloud.points());
    if v.iter().any(|e| !e.is_finite()) {
        return Err(DriftError::NonFinite("drift field"));
    }
    Ok(v)
}

fn linear_weights<T: Scalar>(k: &CouplingMatrix<T>, scheme: &Scheme) -> Result<Array2<T>> {
    let (n, m) = k.dim();
    let out = match scheme {
        Scheme::OneSided => row_softmax(k),
        Scheme::TwoSided => two_sided_normalize(k).map(|p| p.to_linear()),
        Scheme::Sinkhorn(stop) => sinkhorn_row_weights(k, &Marginals::uniform(n, m)?, *stop),
    };
    out.map_err(|e| tag(e, scheme))
}

fn row_softmax<T: Scalar>(k: &CouplingMatrix<T>) -> Result<Array2<T>> {
    let mut out = k.log_values().to_owned();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        if max == T::neg_infinity() {
            return Err(DriftError::DegenerateSupport {
                axis: "row",
                index: i,
                scheme: None,
            });
        }
        let mut acc = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            acc += *v;
        }
        let inv = acc.recip();
        row.mapv_inplace(|v| v * inv);
    }
    Ok(out)
}

/// Sinkhorn level for [`level_l_drift`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Level {
    Finite(usize),
    Converged { tol: f64, max_half_steps: usize },
}

impl Level {
    fn stop(self) -> SinkhornStop {
        match self {
            Level::Finite(l) => SinkhornStop::HalfSteps(l),
            Level::Converged { tol, max_half_steps } => SinkhornStop::Tolerance { tol, max_half_steps },
        }
    }

    pub fn converged() -> Self {
        match SinkhornStop::converged() {
            SinkhornStop::Tolerance { tol, max_half_steps } => Level::Converged { tol, max_half_steps },
            SinkhornStop::HalfSteps(_) => unreachable!(),
        }
    }
}

/// Level-`l` field `Σ_j (nπ^l_XY)_ij y_j − Σ_j (nπ^l_XX)_ij x_j`, with uniform marginals
/// and no renormalization of the truncated plans.
pub fn level_l_drift<T: Scalar>(
    x: &PointCloud<T>,
    y: &PointCloud<T>,
    level: Level,
    tau: T,
    cost: CostKind,
) -> Result<DriftField<T>> {
    if let Level::Finite(0) = level {
        return Err(DriftError::InvalidInput("level must be at least 1".into()));
    }
    let stop = level.stop();
    let scheme = Scheme::Sinkhorn(stop);
    let n = x.n();
    let nn = T::from_usize_lossy(n);
    let plan = |other: &PointCloud<T>| -> Result<CouplingMatrix<T>> {
        let k = gibbs_kernel(&pairwise_cost(x, other, cost)?, tau)?;
        let marg = Marginals::uniform(n, other.n())?;
        let pi = sinkhorn(&k, &marg, stop).map_err(|e| tag(e, &scheme))?;
        Ok(pi.scaled(nn, MarginalStatus::SinkhornScaled {
            converged: matches!(level, Level::Converged { .. }),
        }))
    };
    let p_pos = plan(y)?;
    let p_neg = plan(x)?;
    let velocities = barycentric_projection(&p_pos, y)? - barycentric_projection(&p_neg, x)?;
    Ok(DriftField {
        velocities,
        scheme,
        masked_self: false,
        tau,
        p_pos,
        p_neg,
    })
}

/// `(1/N) Σ_i V_i`.
pub fn mean_of_drift<T: Scalar>(v: &DriftField<T>) -> Vec<T> {
    let n = T::from_usize_lossy(v.n());
    v.velocities
        .sum_axis(Axis(0))
        .iter()
        .map(|&s| s / n)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use crate::coupling::LONG_RUN_MAX_HALF_STEPS;
    use rand::Rng;

    fn random_cloud(n: usize, d: usize, seed: u64) -> PointCloud<f64> {
        let mut rng = RngState::new(seed);
        let pts = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        PointCloud::new(pts).unwrap()
    }

    fn converged_cfg(tau: f64) -> DriftConfig<f64> {
        DriftConfig::new(
            Scheme::Sinkhorn(SinkhornStop::Tolerance { tol: 1e-13, max_half_steps: 20_000 }),
            tau,
            CostKind::SqEuclideanHalf,
        )
    }

    #[test]
    fn single_point_gives_displacement() {
        let x = PointCloud::from_rows(&[vec![0.5, -1.0]]).unwrap();
        let y = PointCloud::from_rows(&[vec![2.0, 3.0]]).unwrap();
        for scheme in [Scheme::OneSided, Scheme::TwoSided, Scheme::Sinkhorn(SinkhornStop::HalfSteps(3))] {
            let cfg = DriftConfig::new(scheme, 0.3, CostKind::SqEuclidean).with_mask(SelfMask::On);
            let v = drift_field(&x, &y, Negatives::SelfTerm, &cfg).unwrap();
            assert_eq!(v.velocities().row(0).to_vec(), vec![1.5, 4.0]);
        }
    }

    #[test]
    fn permutation_gives_zero_field() {
        let y = random_cloud(12, 2, 1);
        let perm: Vec<usize> = (0..12).rev().collect();
        let x = y.permuted(&perm).unwrap();
        let v = drift_field(&x, &y, Negatives::SelfTerm, &converged_cfg(0.1)).unwrap();
        assert!(v.max_norm() < 1e-8);
    }

    #[test]
    fn antipodal_pair_matches_symmetric_closed_form() {
        // x = ±r·â, y = ±s·b̂: the converged plan is [[α,1−α],[1−α,α]]/2 with
        // α = κ1/(κ1+κ2), so the cross barycenter of x1 is (2α−1)·s·b̂.
        let (r, s, tau) = (1.0f64, 1.0f64, 0.7f64);
        let theta: f64 = 0.4;
        let a = [1.0, 0.0];
        let b = [theta.cos(), theta.sin()];
        let x = PointCloud::from_rows(&[vec![r * a[0], r * a[1]], vec![-r * a[0], -r * a[1]]]).unwrap();
        let y = PointCloud::from_rows(&[vec![s * b[0], s * b[1]], vec![-s * b[0], -s * b[1]]]).unwrap();
        let cfg = converged_cfg(tau);
        let v = drift_field(&x, &y, Negatives::SelfTerm, &cfg).unwrap();
        let bary = barycentric_projection(v.positive_weights(), &y).unwrap();
        let dot = a[0] * b[0] + a[1] * b[1];
        let k1 = (-(0.5 * ((r * a[0] - s * b[0]).powi(2) + (r * a[1] - s * b[1]).powi(2))) / tau).exp();
        let k2 = (-(0.5 * ((r * a[0] + s * b[0]).powi(2) + (r * a[1] + s * b[1]).powi(2))) / tau).exp();
        let alpha = k1 / (k1 + k2);
        assert!(((2.0 * alpha - 1.0) - (r * s * dot / tau).tanh()).abs() < 1e-14);
        for k in 0..2 {
            assert!((bary[[0, k]] - (2.0 * alpha - 1.0) * s * b[k]).abs() < 1e-10);
            assert!((bary[[1, k]] + (2.0 * alpha - 1.0) * s * b[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn level_one_equals_unmasked_one_sided() {
        let x = random_cloud(9, 2, 4);
        let y = random_cloud(9, 2, 5);
        let l1 = level_l_drift(&x, &y, Level::Finite(1), 0.2, CostKind::SqEuclideanHalf).unwrap();
        let cfg = DriftConfig::new(Scheme::OneSided, 0.2, CostKind::SqEuclideanHalf);
        let one = drift_field(&x, &y, Negatives::SelfTerm, &cfg).unwrap();
        for (a, b) in l1.velocities().iter().zip(one.velocities().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fast_path_matches_full_field() {
        let x = random_cloud(30, 2, 21);
        let y = random_cloud(25, 2, 22);
        let schemes = [Scheme::OneSided, Scheme::TwoSided, Scheme::Sinkhorn(SinkhornStop::HalfSteps(61))];
        for scheme in schemes {
            for mask in [SelfMask::Off, SelfMask::Forced] {
                for tau in [0.01, 0.3] {
                    let cfg = DriftConfig::new(scheme, tau, CostKind::SqEuclidean).with_mask(mask);
                    let full = drift_field(&x, &y, Negatives::SelfTerm, &cfg).unwrap();
                    let fast = drift_velocities(&x, &y, Negatives::SelfTerm, &cfg).unwrap();
                    for (a, b) in full.velocities().iter().zip(fast.iter()) {
                        assert!((a - b).abs() < 1e-12, "{scheme} {mask:?} {tau}: {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn level_infinity_on_permutation_is_zero() {
        let y = random_cloud(10, 3, 6);
        let x = y.permuted(&[3, 1, 0, 2, 9, 8, 7, 6, 5, 4]).unwrap();
        let level = Level::Converged { tol: 1e-9, max_half_steps: LONG_RUN_MAX_HALF_STEPS };
        let v = level_l_drift(&x, &y, level, 0.05, CostKind::SqEuclideanHalf).unwrap();
        assert!(v.max_norm() < 1e-8);
    }

    #[test]
    fn level_three_matches_scripted_half_steps() {
        let x = random_cloud(5, 2, 7);
        let y = random_cloud(5, 2, 8);
        let tau = 0.3;
        // Linear-domain oracle: row, column, row scaling of the raw kernel.
        let scripted = |a: &PointCloud<f64>, b: &PointCloud<f64>| -> Array2<f64> {
            let mut p = Array2::from_shape_fn((5, 5), |(i, j)| {
                let d: f64 = (0..2).map(|k| (a.point(i)[k] - b.point(j)[k]).powi(2)).sum();
                (-0.5 * d / tau).exp()
            });
            for step in 1..=3 {
                if step % 2 == 1 {
                    for mut row in p.rows_mut() {
                        let s = row.sum();
                        row.mapv_inplace(|v| v * 0.2 / s);
                    }
                } else {
                    for mut col in p.columns_mut() {
                        let s = col.sum();
                        col.mapv_inplace(|v| v * 0.2 / s);
                    }
                }
            }
            p * 5.0
        };
        let expected = scripted(&x, &y).dot(&y.points()) - scripted(&x, &x).dot(&x.points());
        let v = level_l_drift(&x, &y, Level::Finite(3), tau, CostKind::SqEuclideanHalf).unwrap();
        for (a, b) in v.velocities().iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn mean_of_drift_examples() {
        let x = random_cloud(7, 2, 9);
        let y = random_cloud(11, 2, 10);
        let v = drift_field(&x, &y, Negatives::SelfTerm, &converged_cfg(0.3)).unwrap();
        let mean = mean_of_drift(&v);
        let (xm, ym) = (x.mean(), y.mean());
        for k in 0..2 {
            assert!((mean[k] - (ym[k] - xm[k])).abs() < 1e-10);
        }

        let same = drift_field(&x, &x, Negatives::SelfTerm, &converged_cfg(0.3)).unwrap();
        assert!(mean_of_drift(&same).iter().all(|m| m.abs() < 1e-12));

        // One-sided weights carry no column constraint, so the identity generally fails.
        let cfg = DriftConfig::new(Scheme::OneSided, 0.3, CostKind::SqEuclideanHalf);
        let v = drift_field(&x, &y, Negatives::SelfTerm, &cfg).unwrap();
        let m1 = mean_of_drift(&v);
        let gap: f64 = (0..2).map(|k| (m1[k] - (ym[k] - xm[k])).abs()).sum();
        assert!(gap > 1e-6);
    }

    #[test]
    fn barycenter_form_equals_displacement_form() {
        let x = random_cloud(6, 2, 11);
        let y = random_cloud(8, 2, 12);
        for scheme in [Scheme::OneSided, Scheme::TwoSided, Scheme::Sinkhorn(SinkhornStop::HalfSteps(5))] {
            let cfg = DriftConfig::new(scheme, 0.5, CostKind::SqEuclidean).with_mask(SelfMask::On);
            let v = drift_field(&x, &y, Negatives::SelfTerm, &cfg).unwrap();
            let pp = v.positive_weights().to_linear();
            let pn = v.negative_weights().to_linear();
            for i in 0..6 {
                for k in 0..2 {
                    let attract: f64 = (0..8).map(|j| pp[[i, j]] * (y.point(j)[k] - x.point(i)[k])).sum();
                    let repel: f64 = (0..6).map(|j| pn[[i, j]] * (x.point(j)[k] - x.point(i)[k])).sum();
                    assert!((v.velocities()[[i, k]] - (attract - repel)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn even_sinkhorn_half_steps_rejected() {
        let x = random_cloud(3, 2, 0);
        let cfg = DriftConfig::new(Scheme::Sinkhorn(SinkhornStop::HalfSteps(30)), 0.1, CostKind::SqEuclidean);
        assert!(drift_field(&x, &x, Negatives::SelfTerm, &cfg).is_err());
        let bad_tau = DriftConfig::new(Scheme::OneSided, 0.0, CostKind::SqEuclidean);
        assert!(drift_field(&x, &x, Negatives::SelfTerm, &bad_tau).is_err());
    }

    #[test]
    fn degenerate_rows_name_the_scheme() {
        let x = PointCloud::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let y = PointCloud::from_rows(&[vec![3.0]]).unwrap();
        // C/τ overflows, so every kernel entry of the cross term is an exact zero.
        let cfg = DriftConfig::new(Scheme::OneSided, 1e-320, CostKind::SqEuclidean);
        let err = drift_field(&x, &y, Negatives::SelfTerm, &cfg).unwrap_err();
        assert_eq!(
            err,
            DriftError::DegenerateSupport { axis: "row", index: 0, scheme: Some("one-sided") }
        );
    }

    #[test]
    fn sinkhorn_ignores_on_mask_but_honors_forced() {
        let x = random_cloud(5, 2, 13);
        let y = random_cloud(5, 2, 14);
        let stop = SinkhornStop::HalfSteps(7);
        let plain = DriftConfig::new(Scheme::Sinkhorn(stop), 0.2, CostKind::SqEuclidean);
        let on = plain.with_mask(SelfMask::On);
        let forced = plain.with_mask(SelfMask::Forced);
        let v0 = drift_field(&x, &y, Negatives::SelfTerm, &plain).unwrap();
        let v1 = drift_field(&x, &y, Negatives::SelfTerm, &on).unwrap();
        let v2 = drift_field(&x, &y, Negatives::SelfTerm, &forced).unwrap();
        assert_eq!(v0.velocities(), v1.velocities());
        assert!(!v1.masked_self());
        assert!(v2.masked_self());
        assert_ne!(v0.velocities(), v2.velocities());
    }
}
