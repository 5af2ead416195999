//! Numerical identifiability checks.
//!
//! * A two-point counterexample where the one-sided drift vanishes on the data support
//!   although the model and data differ, located by Miranda-box subdivision.
//! * The two-point identifiability grid for converged Sinkhorn drift.
//! * The unregularized (assignment) identity.
//! * A bundle of smaller invariants, run together by [`run_suite`].

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use serde::Serialize;

use crate::coupling::{row_normalize, sinkhorn, CouplingMatrix, Marginals, SinkhornStop};
use crate::drift::{drift_field, mean_of_drift, DriftConfig, Negatives, Scheme};
use crate::error::{DriftError, Result};
use crate::flow::stop_gradient_euler_check;
use crate::geometry::{gibbs_kernel, pairwise_cost, CostKind, PointCloud};
use crate::metrics::exact_w2sq;
use crate::rng::RngState;
use crate::scalar::Scalar;

/// `(F1, F2)`: the one-sided drift at data points 0 and 1, scaled by its two softmax
/// normalizers, for data `{0, 1}`, model `{a, b}` and kernel `exp(−(x−y)²)`.
pub fn eval_f1f2<T: Scalar>(a: T, b: T) -> (T, T) {
    let one = T::one();
    let e = |v: T| v.exp();
    let f1 = (-a) * e(-a * a) + (-b) * e(-b * b) + (one - a) * e(-a * a - one) + (one - b) * e(-b * b - one);
    let (ma, mb) = (one - a, one - b);
    let f2 = (-a) * e(-one - ma * ma) + (-b) * e(-one - mb * mb) + ma * e(-ma * ma) + mb * e(-mb * mb);
    (f1, f2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rect {
    pub a_lo: f64,
    pub a_hi: f64,
    pub b_lo: f64,
    pub b_hi: f64,
}

impl Rect {
    pub const COUNTEREXAMPLE: Rect = Rect {
        a_lo: -1.5,
        a_hi: -1.2,
        b_lo: 0.6,
        b_hi: 0.9,
    };

    pub fn contains_strictly(&self, a: f64, b: f64) -> bool {
        self.a_lo < a && a < self.a_hi && self.b_lo < b && b < self.b_hi
    }

    fn center(&self) -> (f64, f64) {
        (0.5 * (self.a_lo + self.a_hi), 0.5 * (self.b_lo + self.b_hi))
    }

    fn width(&self) -> f64 {
        (self.a_hi - self.a_lo).max(self.b_hi - self.b_lo)
    }
}

/// Smallest signed margins seen on each edge: `−F1` on the left, `F1` on the right,
/// `F2` at the bottom and `−F2` at the top. All positive means the sign pattern holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdgeMargins {
    pub left: f64,
    pub right: f64,
    pub bottom: f64,
    pub top: f64,
    pub samples_per_edge: usize,
}

impl EdgeMargins {
    pub fn holds(&self) -> bool {
        self.left > 0.0 && self.right > 0.0 && self.bottom > 0.0 && self.top > 0.0
    }
}

/// Samples the Miranda sign pattern `F1<0` left, `F1>0` right, `F2>0` bottom, `F2<0` top.
pub fn miranda_margins<F>(f: &F, rect: &Rect, samples: usize) -> EdgeMargins
where
    F: Fn(f64, f64) -> (f64, f64),
{
    let samples = samples.max(2);
    let lerp = |lo: f64, hi: f64, k: usize| lo + (hi - lo) * k as f64 / (samples - 1) as f64;
    let mut m = EdgeMargins {
        left: f64::INFINITY,
        right: f64::INFINITY,
        bottom: f64::INFINITY,
        top: f64::INFINITY,
        samples_per_edge: samples,
    };
    for k in 0..samples {
        let b = lerp(rect.b_lo, rect.b_hi, k);
        m.left = m.left.min(-f(rect.a_lo, b).0);
        m.right = m.right.min(f(rect.a_hi, b).0);
        let a = lerp(rect.a_lo, rect.a_hi, k);
        m.bottom = m.bottom.min(f(a, rect.b_lo).1);
        m.top = m.top.min(-f(a, rect.b_hi).1);
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterexampleInstance {
    pub rect: Rect,
    pub root: (f64, f64),
    pub residuals: (f64, f64),
    pub certificate: EdgeMargins,
    pub levels: usize,
    pub final_width: f64,
    /// Box centers after each refinement level.
    pub history: Vec<(f64, f64)>,
}

/// Nested Miranda boxes: each level keeps a half-size sub-box (from a 3×3 overlapping
/// family) on whose sampled boundary the sign pattern still holds.
pub fn find_root_miranda<F>(f: F, rect: Rect, samples: usize, min_width: f64) -> Result<CounterexampleInstance>
where
    F: Fn(f64, f64) -> (f64, f64),
{
    let certificate = miranda_margins(&f, &rect, samples);
    if !certificate.holds() {
        return Err(DriftError::TheoryCheck(format!(
            "Miranda sign conditions fail on the boundary of {rect:?}: {certificate:?}"
        )));
    }
    let order = [(1, 1), (0, 0), (0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1), (2, 2)];
    let mut current = rect;
    let mut history = Vec::new();
    let mut levels = 0;
    while current.width() > min_width && levels < 200 {
        let wa = current.a_hi - current.a_lo;
        let wb = current.b_hi - current.b_lo;
        let next = order.iter().find_map(|&(i, j)| {
            let a_lo = current.a_lo + 0.25 * wa * i as f64;
            let b_lo = current.b_lo + 0.25 * wb * j as f64;
            let child = Rect {
                a_lo,
                a_hi: a_lo + 0.5 * wa,
                b_lo,
                b_hi: b_lo + 0.5 * wb,
            };
            miranda_margins(&f, &child, samples).holds().then_some(child)
        });
        match next {
            Some(child) => {
                current = child;
                levels += 1;
                history.push(current.center());
            }
            None => break,
        }
    }
    let root = current.center();
    let residuals = f(root.0, root.1);
    Ok(CounterexampleInstance {
        rect,
        root,
        residuals,
        certificate,
        levels,
        final_width: current.width(),
        history,
    })
}

pub fn find_counterexample(rect: Rect, samples: usize, min_width: f64) -> Result<CounterexampleInstance> {
    find_root_miranda(eval_f1f2::<f64>, rect, samples, min_width)
}

/// Drift magnitudes at a counterexample root `(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CounterexampleDrifts {
    /// One-sided, unmasked drift evaluated at the data points `{0, 1}`.
    pub one_sided_at_data: f64,
    /// Converged Sinkhorn drift of the model particles `{a, b}` towards `{0, 1}`.
    pub sinkhorn_at_model: f64,
}

pub fn counterexample_drifts(a: f64, b: f64) -> Result<CounterexampleDrifts> {
    let data = PointCloud::from_rows(&[vec![0.0], vec![1.0]])?;
    let model = PointCloud::from_rows(&[vec![a], vec![b]])?;
    let one = DriftConfig::new(Scheme::OneSided, 1.0, CostKind::SqEuclidean);
    let v1 = drift_field(&data, &data, Negatives::Samples(&model), &one)?;
    let sk = DriftConfig::new(
        Scheme::Sinkhorn(SinkhornStop::Tolerance { tol: 1e-13, max_half_steps: 100_000 }),
        1.0,
        CostKind::SqEuclidean,
    );
    let v2 = drift_field(&model, &data, Negatives::SelfTerm, &sk)?;
    Ok(CounterexampleDrifts {
        one_sided_at_data: v1.max_norm(),
        sinkhorn_at_model: v2.max_norm(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct N2Report {
    pub r: f64,
    pub s: f64,
    pub theta: f64,
    pub tau: f64,
    pub v_max: f64,
    pub sets_equal: bool,
}

fn same_sets(x: &PointCloud<f64>, y: &PointCloud<f64>, tol: f64) -> bool {
    let close = |i: usize, j: usize| {
        x.point(i)
            .iter()
            .zip(y.point(j).iter())
            .all(|(a, b)| (a - b).abs() <= tol)
    };
    (close(0, 0) && close(1, 1)) || (close(0, 1) && close(1, 0))
}

/// Converged Sinkhorn drift for `x = ±r·â`, `y = ±s·b̂` with `∠(â, b̂) = θ`.
pub fn verify_n2_identifiability(r: f64, s: f64, theta: f64, tau: f64) -> Result<N2Report> {
    if !(r > 0.0 && s > 0.0) {
        return Err(DriftError::InvalidInput(format!(
            "degenerate two-point configuration (r={r}, s={s})"
        )));
    }
    let (c, sn) = (theta.cos(), theta.sin());
    let x = PointCloud::from_rows(&[vec![r, 0.0], vec![-r, 0.0]])?;
    let y = PointCloud::from_rows(&[vec![s * c, s * sn], vec![-s * c, -s * sn]])?;
    let cfg = DriftConfig::new(
        Scheme::Sinkhorn(SinkhornStop::Tolerance { tol: 1e-14, max_half_steps: 100_000 }),
        tau,
        CostKind::SqEuclideanHalf,
    );
    let v = drift_field(&x, &y, Negatives::SelfTerm, &cfg)?;
    Ok(N2Report {
        r,
        s,
        theta,
        tau,
        v_max: v.max_norm(),
        sets_equal: same_sets(&x, &y, 1e-6),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct N2GridSummary {
    pub cells: usize,
    /// Largest field among cells whose sets coincide.
    pub max_v_equal: f64,
    /// Smallest field among cells whose sets differ.
    pub min_v_distinct: f64,
    pub pass: bool,
}

pub const N2_ZERO_TOL: f64 = 1e-8;

/// Grid `r, s ∈ {0.5, 1, 2}`, `θ ∈ {0, π/6, …, π}`, `τ ∈ {0.1, 1}`.
pub fn n2_grid() -> Result<(Vec<N2Report>, N2GridSummary)> {
    let mut reports = Vec::new();
    for &tau in &[0.1, 1.0] {
        for &r in &[0.5, 1.0, 2.0] {
            for &s in &[0.5, 1.0, 2.0] {
                for k in 0..=6 {
                    reports.push(verify_n2_identifiability(r, s, PI * k as f64 / 6.0, tau)?);
                }
            }
        }
    }
    let max_v_equal = reports.iter().filter(|r| r.sets_equal).map(|r| r.v_max).fold(0.0, f64::max);
    let min_v_distinct = reports
        .iter()
        .filter(|r| !r.sets_equal)
        .map(|r| r.v_max)
        .fold(f64::INFINITY, f64::min);
    let summary = N2GridSummary {
        cells: reports.len(),
        max_v_equal,
        min_v_distinct,
        pass: max_v_equal < N2_ZERO_TOL && min_v_distinct >= N2_ZERO_TOL,
    };
    Ok((reports, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tau0Report {
    /// `max_i ‖y_σ(i) − x_i‖∞` under the optimal assignment σ.
    pub residual: f64,
    /// Per-particle residual vectors.
    pub residuals: Vec<Vec<f64>>,
    pub is_permutation: bool,
}

/// Assignment-plan residual `n·π_σ·Y − X`; vanishes exactly when `Y` permutes `X`.
pub fn verify_tau0_identity(x: &PointCloud<f64>, y: &PointCloud<f64>) -> Result<Tau0Report> {
    let assign = exact_w2sq(x, y)?;
    let mut residuals = Vec::with_capacity(x.n());
    let mut worst: f64 = 0.0;
    for (i, &j) in assign.permutation.iter().enumerate() {
        let r: Vec<f64> = y.point(j).iter().zip(x.point(i).iter()).map(|(b, a)| b - a).collect();
        worst = r.iter().fold(worst, |m, v| m.max(v.abs()));
        residuals.push(r);
    }
    Ok(Tau0Report {
        residual: worst,
        residuals,
        is_permutation: worst == 0.0,
    })
}

/// One line of the theory report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub parameters: BTreeMap<String, f64>,
    pub residuals: BTreeMap<String, f64>,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            parameters: BTreeMap::new(),
            residuals: BTreeMap::new(),
            pass: false,
            detail: String::new(),
        }
    }

    fn param(mut self, k: &str, v: f64) -> Self {
        self.parameters.insert(k.into(), v);
        self
    }

    fn resid(mut self, k: &str, v: f64) -> Self {
        self.residuals.insert(k.into(), v);
        self
    }

    fn failed(name: &str, err: DriftError) -> Self {
        let mut c = Self::new(name);
        c.detail = err.to_string();
        c
    }
}

pub const CHECK_NAMES: [&str; 8] = [
    "counterexample",
    "n2-identifiability",
    "tau0-identity",
    "t1-reduction",
    "zero-drift",
    "equal-means",
    "symmetric-scaling",
    "euler-equivalence",
];

#[derive(Debug, Clone, Default)]
pub struct SuiteOptions {
    /// Restrict to these check names; `None` runs everything.
    pub only: Option<Vec<String>>,
    /// Test hook: flip the sign of F1 before the counterexample search.
    pub flip_f1_sign: bool,
    pub seed: u64,
}

pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<CheckResult>> {
    if let Some(only) = &opts.only {
        if let Some(bad) = only.iter().find(|n| !CHECK_NAMES.contains(&n.as_str())) {
            return Err(DriftError::InvalidInput(format!(
                "unknown check `{bad}`; known: {}",
                CHECK_NAMES.join(", ")
            )));
        }
    }
    let wanted = |name: &str| opts.only.as_ref().map_or(true, |o| o.iter().any(|n| n == name));
    let mut out = Vec::new();
    for name in CHECK_NAMES {
        if !wanted(name) {
            continue;
        }
        let r = match name {
            "counterexample" => check_counterexample(opts.flip_f1_sign),
            "n2-identifiability" => check_n2(),
            "tau0-identity" => check_tau0(opts.seed),
            "t1-reduction" => check_t1(opts.seed),
            "zero-drift" => check_zero_drift(opts.seed),
            "equal-means" => check_equal_means(opts.seed),
            "symmetric-scaling" => check_symmetric_scaling(),
            "euler-equivalence" => check_euler(opts.seed),
            _ => unreachable!(),
        };
        out.push(r.unwrap_or_else(|e| CheckResult::failed(name, e)));
    }
    Ok(out)
}

fn random_cloud(n: usize, d: usize, rng: &mut RngState) -> PointCloud<f64> {
    PointCloud::new(Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))).expect("finite")
}

fn random_perm(n: usize, rng: &mut RngState) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.random_range(0..=i));
    }
    p
}

fn check_counterexample(flip: bool) -> Result<CheckResult> {
    let f = move |a: f64, b: f64| {
        let (f1, f2) = eval_f1f2(a, b);
        (if flip { -f1 } else { f1 }, f2)
    };
    let rect = Rect::COUNTEREXAMPLE;
    let inst = find_root_miranda(f, rect, 64, 1e-12)?;
    let drifts = counterexample_drifts(inst.root.0, inst.root.1)?;
    let res = inst.residuals.0.abs().max(inst.residuals.1.abs());
    let mut c = CheckResult::new("counterexample")
        .param("samples_per_edge", 64.0)
        .param("a_star", inst.root.0)
        .param("b_star", inst.root.1)
        .resid("f1", inst.residuals.0)
        .resid("f2", inst.residuals.1)
        .resid("one_sided_drift_at_data", drifts.one_sided_at_data)
        .resid("sinkhorn_drift_at_model", drifts.sinkhorn_at_model);
    c.pass = inst.certificate.holds()
        && rect.contains_strictly(inst.root.0, inst.root.1)
        && res < 1e-10
        && drifts.one_sided_at_data < 1e-10
        && drifts.sinkhorn_at_model > 1e-3;
    c.detail = format!("root found after {} Miranda refinements", inst.levels);
    Ok(c)
}

fn check_n2() -> Result<CheckResult> {
    let (_, s) = n2_grid()?;
    let mut c = CheckResult::new("n2-identifiability")
        .param("cells", s.cells as f64)
        .resid("max_v_equal_sets", s.max_v_equal)
        .resid("min_v_distinct_sets", s.min_v_distinct);
    c.pass = s.pass;
    Ok(c)
}

fn check_tau0(seed: u64) -> Result<CheckResult> {
    let mut rng = RngState::new(seed).split(10);
    let x = random_cloud(8, 2, &mut rng);
    let shuffled = x.permuted(&random_perm(8, &mut rng))?;
    let other = random_cloud(8, 2, &mut rng);
    let a = verify_tau0_identity(&x, &shuffled)?;
    let b = verify_tau0_identity(&x, &other)?;
    let mut c = CheckResult::new("tau0-identity")
        .resid("permuted_residual", a.residual)
        .resid("random_residual", b.residual);
    c.pass = a.is_permutation && !b.is_permutation && b.residual > 0.0;
    Ok(c)
}

fn check_t1(seed: u64) -> Result<CheckResult> {
    let mut rng = RngState::new(seed).split(11);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for &n in &[5usize, 50] {
        for &tau in &[0.05, 0.5, 5.0] {
            for _ in 0..8 {
                worst = worst.max(t1_gap(n, tau, &mut rng)?);
                count += 1;
            }
        }
    }
    let mut c = CheckResult::new("t1-reduction").param("instances", count as f64).resid("max_abs_gap", worst);
    c.pass = worst <= 1e-12;
    Ok(c)
}

/// `max |N·π⁽¹⁾ − rowsoftmax(K)|` on a random instance.
pub fn t1_gap(n: usize, tau: f64, rng: &mut RngState) -> Result<f64> {
    let x = random_cloud(n, 2, rng);
    let y = random_cloud(n, 2, rng);
    let k = gibbs_kernel(&pairwise_cost(&x, &y, CostKind::SqEuclideanHalf)?, tau)?;
    let pi = sinkhorn(&k, &Marginals::uniform(n, n)?, SinkhornStop::HalfSteps(1))?.to_linear() * n as f64;
    let rs = row_normalize(&k)?.to_linear();
    Ok(pi.iter().zip(rs.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

fn converged_cfg(tau: f64) -> DriftConfig<f64> {
    DriftConfig::new(
        Scheme::Sinkhorn(SinkhornStop::Tolerance { tol: 1e-13, max_half_steps: 200_000 }),
        tau,
        CostKind::SqEuclideanHalf,
    )
}

fn check_zero_drift(seed: u64) -> Result<CheckResult> {
    let mut rng = RngState::new(seed).split(12);
    let mut worst: f64 = 0.0;
    for &tau in &[0.01, 0.1, 1.0] {
        let y = random_cloud(64, 2, &mut rng);
        let x = y.permuted(&random_perm(64, &mut rng))?;
        let cfg = DriftConfig::new(Scheme::Sinkhorn(SinkhornStop::long_run()), tau, CostKind::SqEuclideanHalf);
        let v = drift_field(&x, &y, Negatives::SelfTerm, &cfg)?;
        worst = worst.max(v.max_norm());
    }
    let mut c = CheckResult::new("zero-drift").param("n", 64.0).resid("max_abs_velocity", worst);
    c.pass = worst < 1e-8;
    Ok(c)
}

fn check_equal_means(seed: u64) -> Result<CheckResult> {
    let mut rng = RngState::new(seed).split(13);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let n = 5 + (k % 4) * 10;
        let m = 7 + (k % 3) * 9;
        let x = random_cloud(n, 2, &mut rng);
        let y = random_cloud(m, 2, &mut rng);
        worst = worst.max(mean_gap(&x, &y, 0.2)?);
    }
    let mut c = CheckResult::new("equal-means").param("instances", 20.0).resid("max_abs_gap", worst);
    c.pass = worst < 1e-10;
    Ok(c)
}

/// `max_k |mean(V)_k − (ȳ − x̄)_k|` under converged Sinkhorn drift.
pub fn mean_gap(x: &PointCloud<f64>, y: &PointCloud<f64>, tau: f64) -> Result<f64> {
    let v = drift_field(x, y, Negatives::SelfTerm, &converged_cfg(tau))?;
    let mv = mean_of_drift(&v);
    let (xm, ym) = (x.mean(), y.mean());
    Ok((0..x.d()).map(|k| (mv[k] - (ym[k] - xm[k])).abs()).fold(0.0, f64::max))
}

fn check_symmetric_scaling() -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for &(k1, k2) in &[(1.0, 0.5), (3.0, 1e-3), (0.2, 0.9), (1e-6, 1.0), (7.0, 7.0)] {
        worst = worst.max(symmetric_gap(k1, k2)?);
    }
    let mut c = CheckResult::new("symmetric-scaling").resid("max_abs_asymmetry", worst);
    c.pass = worst <= 1e-12;
    Ok(c)
}

/// `max(|π11 − π22|, |π12 − π21|)` for the converged plan of `[[κ1, κ2], [κ2, κ1]]`.
pub fn symmetric_gap(k1: f64, k2: f64) -> Result<f64> {
    let k = CouplingMatrix::from_linear(&ndarray::array![[k1, k2], [k2, k1]])?;
    let pi = sinkhorn(&k, &Marginals::uniform(2, 2)?, SinkhornStop::Tolerance { tol: 1e-15, max_half_steps: 10_000 })?
        .to_linear();
    Ok((pi[[0, 0]] - pi[[1, 1]]).abs().max((pi[[0, 1]] - pi[[1, 0]]).abs()))
}

fn check_euler(seed: u64) -> Result<CheckResult> {
    let mut rng = RngState::new(seed).split(14);
    let x = random_cloud(10, 2, &mut rng);
    let v = random_cloud(10, 2, &mut rng).into_inner();
    let eta = 0.37;
    let stepped = stop_gradient_euler_check(&x, v.view(), eta)?;
    let direct = &x.points() + &(v * eta);
    let worst = stepped
        .points()
        .iter()
        .zip(direct.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mut c = CheckResult::new("euler-equivalence").param("eta", eta).resid("max_abs_gap", worst);
    c.pass = worst <= 1e-15;
    Ok(c)
}
