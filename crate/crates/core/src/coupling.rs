//! Row-stochastic, geometric-mean and Sinkhorn-scaled couplings, all in log domain.
//!
//! A [`CouplingMatrix`] stores natural logarithms of its entries; exact zeros are
//! `-inf`. Softmax reductions are log-sum-exps with max extraction. Sinkhorn keeps its
//! potentials in log domain and iterates on a cached, rescaled kernel between
//! absorptions. All sums run left to right, so results are bit-reproducible.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{DriftError, Result};
use crate::scalar::{log_sum_exp, Scalar};

/// Hard cap on half-steps in tolerance mode.
pub const DEFAULT_MAX_HALF_STEPS: usize = 10_000;
pub const DEFAULT_SINKHORN_TOL: f64 = 1e-9;
/// Cap for long-run reference solves. Near-permutation plans at small `τ` contract at a
/// rate close to one and can need tens of thousands of half-steps.
pub const LONG_RUN_MAX_HALF_STEPS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarginalStatus {
    Raw,
    RowStochastic,
    SinkhornScaled { converged: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix<T> {
    log_values: Array2<T>,
    status: MarginalStatus,
    iterations_used: usize,
}

impl<T: Scalar> CouplingMatrix<T> {
    pub fn from_log(log_values: Array2<T>, status: MarginalStatus, iterations_used: usize) -> Self {
        debug_assert!(
            log_values.iter().all(|v| !v.is_nan() && *v != T::infinity()),
            "log-domain coupling entries must be finite or -inf"
        );
        Self {
            log_values,
            status,
            iterations_used,
        }
    }

    /// Raw kernel from linear-domain entries; zeros become `-inf`.
    pub fn from_linear(values: &Array2<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(DriftError::InvalidInput(
                "kernel entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self::from_log(values.mapv(|v| v.ln()), MarginalStatus::Raw, 0))
    }

    pub fn log_values(&self) -> ArrayView2<'_, T> {
        self.log_values.view()
    }

    pub fn status(&self) -> MarginalStatus {
        self.status
    }

    pub fn iterations_used(&self) -> usize {
        self.iterations_used
    }

    pub fn dim(&self) -> (usize, usize) {
        self.log_values.dim()
    }

    pub fn to_linear(&self) -> Array2<T> {
        self.log_values.mapv(|v| v.exp())
    }

    /// Multiplies every entry by `factor > 0` (adds `ln factor` in log domain).
    pub fn scaled(&self, factor: T, status: MarginalStatus) -> Self {
        let shift = factor.ln();
        Self::from_log(
            self.log_values.mapv(|v| v + shift),
            status,
            self.iterations_used,
        )
    }

    fn row_lse(&self, i: usize) -> T {
        log_sum_exp(self.log_values.row(i).iter().copied())
    }

    fn col_lse(&self) -> Vec<T> {
        let (n, m) = self.dim();
        let mut max = vec![T::neg_infinity(); m];
        for i in 0..n {
            for (mx, &v) in max.iter_mut().zip(self.log_values.row(i)) {
                *mx = mx.max(v);
            }
        }
        let mut acc = vec![T::zero(); m];
        for i in 0..n {
            for ((a, &mx), &v) in acc.iter_mut().zip(&max).zip(self.log_values.row(i)) {
                if mx > T::neg_infinity() {
                    *a += (v - mx).exp();
                }
            }
        }
        max.iter()
            .zip(&acc)
            .map(|(&mx, &a)| if mx == T::neg_infinity() { mx } else { mx + a.ln() })
            .collect()
    }
}

/// Source (`r`, rows) and target (`c`, columns) probability vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals<T> {
    r: Vec<T>,
    c: Vec<T>,
}

impl<T: Scalar> Marginals<T> {
    pub fn new(r: Vec<T>, c: Vec<T>) -> Result<Self> {
        check_prob_vector(&r, "row marginal")?;
        check_prob_vector(&c, "column marginal")?;
        Ok(Self { r, c })
    }

    pub fn uniform(n: usize, m: usize) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(DriftError::InvalidInput("marginals must be non-empty".into()));
        }
        let r = vec![T::one() / T::from_usize_lossy(n); n];
        let c = vec![T::one() / T::from_usize_lossy(m); m];
        Ok(Self { r, c })
    }

    pub fn r(&self) -> &[T] {
        &self.r
    }

    pub fn c(&self) -> &[T] {
        &self.c
    }
}

fn check_prob_vector<T: Scalar>(v: &[T], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(DriftError::InvalidInput(format!("{what} is empty")));
    }
    if v.iter().any(|x| !x.is_finite() || *x < T::zero()) {
        return Err(DriftError::InvalidInput(format!(
            "{what} entries must be finite and non-negative"
        )));
    }
    let sum: T = v.iter().copied().sum();
    let tol = T::lit(1e-12).max(T::epsilon() * T::from_usize_lossy(v.len()));
    if (sum - T::one()).abs() > tol {
        return Err(DriftError::InvalidInput(format!(
            "{what} sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Row softmax: each row of the result sums to one.
pub fn row_normalize<T: Scalar>(k: &CouplingMatrix<T>) -> Result<CouplingMatrix<T>> {
    let (n, _) = k.dim();
    let mut out = k.log_values.clone();
    for i in 0..n {
        let lse = k.row_lse(i);
        if lse == T::neg_infinity() {
            return Err(DriftError::DegenerateSupport {
                axis: "row",
                index: i,
                scheme: None,
            });
        }
        out.row_mut(i).mapv_inplace(|v| v - lse);
    }
    Ok(CouplingMatrix::from_log(
        out,
        MarginalStatus::RowStochastic,
        k.iterations_used,
    ))
}

/// Geometric mean of row- and column-softmax, closed by a row normalization.
pub fn two_sided_normalize<T: Scalar>(k: &CouplingMatrix<T>) -> Result<CouplingMatrix<T>> {
    let (n, _) = k.dim();
    let col = k.col_lse();
    if let Some(j) = col.iter().position(|&v| v == T::neg_infinity()) {
        return Err(DriftError::DegenerateSupport {
            axis: "column",
            index: j,
            scheme: None,
        });
    }
    let half = T::lit(0.5);
    let mut out = k.log_values.clone();
    for i in 0..n {
        let row = k.row_lse(i);
        if row == T::neg_infinity() {
            return Err(DriftError::DegenerateSupport {
                axis: "row",
                index: i,
                scheme: None,
            });
        }
        for (v, &cl) in out.row_mut(i).iter_mut().zip(&col) {
            *v = half * ((*v - row) + (*v - cl));
        }
    }
    row_normalize(&CouplingMatrix::from_log(out, MarginalStatus::Raw, 0))
}

/// When Sinkhorn stops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SinkhornStop {
    /// Exactly this many half-steps (odd ones scale rows, even ones scale columns).
    HalfSteps(usize),
    /// Iterate until the max marginal violation is below `tol`, ending on a row step.
    Tolerance { tol: f64, max_half_steps: usize },
}

impl SinkhornStop {
    pub fn converged() -> Self {
        SinkhornStop::Tolerance {
            tol: DEFAULT_SINKHORN_TOL,
            max_half_steps: DEFAULT_MAX_HALF_STEPS,
        }
    }

    /// Default tolerance with [`LONG_RUN_MAX_HALF_STEPS`].
    pub fn long_run() -> Self {
        SinkhornStop::Tolerance {
            tol: DEFAULT_SINKHORN_TOL,
            max_half_steps: LONG_RUN_MAX_HALF_STEPS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornOutput<T> {
    pub plan: CouplingMatrix<T>,
    /// `history[k]` is the max-norm violation of the marginal about to be enforced by
    /// half-step `k + 2`, i.e. the violation left behind by half-step `k + 1`.
    pub history: Vec<f64>,
    pub row_violation: f64,
    pub col_violation: f64,
}

/// Alternating row/column scaling of `k` towards marginals `m`.
///
/// Starts from `π⁽⁰⁾ = K`; odd half-steps rescale rows to `r`, even half-steps rescale
/// columns to `c`. Tracked as dual potentials so that `log π = log K + f ⊕ g`.
pub fn sinkhorn<T: Scalar>(
    k: &CouplingMatrix<T>,
    m: &Marginals<T>,
    stop: SinkhornStop,
) -> Result<CouplingMatrix<T>> {
    run_sinkhorn(k, m, stop, false).map(|o| o.plan)
}

pub fn sinkhorn_with_history<T: Scalar>(
    k: &CouplingMatrix<T>,
    m: &Marginals<T>,
    stop: SinkhornStop,
) -> Result<SinkhornOutput<T>> {
    run_sinkhorn(k, m, stop, true)
}

fn run_sinkhorn<T: Scalar>(
    k: &CouplingMatrix<T>,
    m: &Marginals<T>,
    stop: SinkhornStop,
    report: bool,
) -> Result<SinkhornOutput<T>> {
    let lk = k.log_values.as_standard_layout();
    let run = iterate(lk.as_slice().expect("standard layout"), k.dim(), m, stop)?;
    let status = MarginalStatus::SinkhornScaled {
        converged: run.tol.is_some() && run.converged,
    };
    let plan = CouplingMatrix::from_log(run.st.log_plan(), status, run.step);
    if let Some(tol) = run.tol {
        if !run.converged {
            let (row_violation, _) = marginal_violation(&plan, m)?;
            return Err(DriftError::NotConverged {
                iterations: run.step,
                violation: run.last_col_violation.max(row_violation),
                tol,
            });
        }
    }
    let (row_violation, col_violation) = if report {
        marginal_violation(&plan, m)?
    } else {
        (f64::NAN, f64::NAN)
    };
    let history = run.history;
    Ok(SinkhornOutput {
        plan,
        history,
        row_violation,
        col_violation,
    })
}

struct Run<'a, T> {
    st: Stabilized<'a, T>,
    step: usize,
    converged: bool,
    tol: Option<f64>,
    history: Vec<f64>,
    last_col_violation: f64,
}

fn iterate<'a, T: Scalar>(
    lk: &'a [T],
    (n, mm): (usize, usize),
    m: &Marginals<T>,
    stop: SinkhornStop,
) -> Result<Run<'a, T>> {
    if m.r.len() != n {
        return Err(DriftError::DimensionMismatch {
            context: "row marginal length",
            expected: n,
            got: m.r.len(),
        });
    }
    if m.c.len() != mm {
        return Err(DriftError::DimensionMismatch {
            context: "column marginal length",
            expected: mm,
            got: m.c.len(),
        });
    }
    let (cap, tol) = match stop {
        SinkhornStop::HalfSteps(t) => {
            if t == 0 {
                return Err(DriftError::InvalidInput(
                    "sinkhorn needs at least one half-step".into(),
                ));
            }
            (t, None)
        }
        SinkhornStop::Tolerance { tol, max_half_steps } => {
            if !(tol > 0.0) || max_half_steps == 0 {
                return Err(DriftError::InvalidInput(
                    "tolerance mode needs tol > 0 and a positive cap".into(),
                ));
            }
            (max_half_steps, Some(tol))
        }
    };

    let mut st = Stabilized::new(lk, n, mm);
    let mut history = Vec::new();
    // Half-step 1 in exact log domain; `K` itself may underflow entirely.
    st.exact_row_step(&m.r)?;
    let mut step = 1usize;
    let mut converged = false;
    let mut last_col_violation = f64::INFINITY;
    let mut sums_c = vec![T::zero(); mm];
    if let Some(tol) = tol {
        st.col_sums(&mut sums_c);
        last_col_violation = st.col_violation(&sums_c, &m.c).as_f64();
        history.push(last_col_violation);
        converged = last_col_violation < tol;
    }
    while step < cap && !converged {
        step += 1;
        if step % 2 == 0 {
            if tol.is_none() {
                st.col_sums(&mut sums_c);
                history.push(st.col_violation(&sums_c, &m.c).as_f64());
            }
            st.col_step(&sums_c, &m.c)?;
        } else {
            history.push(st.row_step(&m.r)?.as_f64());
            if let Some(tol) = tol {
                st.col_sums(&mut sums_c);
                last_col_violation = st.col_violation(&sums_c, &m.c).as_f64();
                history.push(last_col_violation);
                converged = last_col_violation < tol;
            }
        }
    }
    Ok(Run {
        st,
        step,
        converged,
        tol,
        history,
        last_col_violation,
    })
}

/// Sinkhorn followed by row normalization, returned as linear-domain weights.
///
/// Same result as `row_normalize(&sinkhorn(k, m, stop)?)` up to rounding, without the
/// round trip through log space.
pub fn sinkhorn_row_weights<T: Scalar>(
    k: &CouplingMatrix<T>,
    m: &Marginals<T>,
    stop: SinkhornStop,
) -> Result<Array2<T>> {
    let (n, mm) = k.dim();
    let lk = k.log_values.as_standard_layout();
    let run = iterate(lk.as_slice().expect("standard layout"), (n, mm), m, stop)?;
    if let Some(tol) = run.tol {
        if !run.converged {
            return Err(DriftError::NotConverged {
                iterations: run.step,
                violation: run.last_col_violation,
                tol,
            });
        }
    }
    let st = &run.st;
    let mut out = Array2::zeros((n, mm));
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let kt = &st.kt[i * mm..(i + 1) * mm];
        let s = dot4(kt, &st.b);
        if !(s > T::zero()) || !s.is_finite() {
            // Row mass lost to underflow in the cached kernel: fall back to log domain.
            let la = st.f[i] + st.a[i].ln();
            let logs: Vec<T> = (0..mm).map(|j| st.lk[i * mm + j] + la + st.g[j] + st.b[j].ln()).collect();
            let lse = log_sum_exp(logs.iter().copied());
            if lse == T::neg_infinity() {
                return Err(DriftError::DegenerateSupport {
                    axis: "row",
                    index: i,
                    scheme: Some("sinkhorn"),
                });
            }
            for (o, l) in row.iter_mut().zip(logs) {
                *o = (l - lse).exp();
            }
            continue;
        }
        let inv = s.recip();
        for ((o, &kv), &bj) in row.iter_mut().zip(kt).zip(&st.b) {
            *o = kv * bj * inv;
        }
    }
    Ok(out)
}

/// Log-stabilized scaling state: `π_ij = a_i · exp(log K_ij + f_i + g_j) · b_j`.
///
/// Half-steps update the linear factors `a`, `b` with one multiply-add per entry. When a
/// factor leaves `[1/BIG, BIG]` it is folded into the log potentials `f`, `g` and the
/// cached kernel is rebuilt; a half-step whose sums underflow is redone exactly in log
/// domain.
struct Stabilized<'a, T> {
    lk: &'a [T],
    n: usize,
    m: usize,
    f: Vec<T>,
    g: Vec<T>,
    a: Vec<T>,
    b: Vec<T>,
    kt: Vec<T>,
    big: T,
}

impl<'a, T: Scalar> Stabilized<'a, T> {
    fn new(lk: &'a [T], n: usize, m: usize) -> Self {
        Self {
            lk,
            n,
            m,
            f: vec![T::zero(); n],
            g: vec![T::zero(); m],
            a: vec![T::one(); n],
            b: vec![T::one(); m],
            kt: vec![T::zero(); n * m],
            big: T::max_value().powf(T::lit(1.0 / 6.0)),
        }
    }

    fn in_range(&self, v: T) -> bool {
        v.is_finite() && v <= self.big && v >= self.big.recip()
    }

    fn absorb(&mut self) {
        for (f, a) in self.f.iter_mut().zip(self.a.iter_mut()) {
            *f += a.ln();
            *a = T::one();
        }
        for (g, b) in self.g.iter_mut().zip(self.b.iter_mut()) {
            *g += b.ln();
            *b = T::one();
        }
        self.rebuild();
    }

    fn rebuild(&mut self) {
        let m = self.m;
        for i in 0..self.n {
            let fi = self.f[i];
            let src = &self.lk[i * m..(i + 1) * m];
            for ((k, &l), &gj) in self.kt[i * m..(i + 1) * m].iter_mut().zip(src).zip(&self.g) {
                *k = (l + fi + gj).exp();
            }
        }
    }

    /// Exact log-domain row scaling; the cached kernel is filled from the same
    /// exponentials that form each row's log-sum-exp.
    fn exact_row_step(&mut self, r: &[T]) -> Result<()> {
        let m = self.m;
        for i in 0..self.n {
            let src = &self.lk[i * m..(i + 1) * m];
            let max = src
                .iter()
                .zip(&self.g)
                .fold(T::neg_infinity(), |mx, (&l, &gj)| mx.max(l + gj));
            if max == T::neg_infinity() {
                return Err(DriftError::DegenerateSupport {
                    axis: "row",
                    index: i,
                    scheme: Some("sinkhorn"),
                });
            }
            let dst = &mut self.kt[i * m..(i + 1) * m];
            let mut acc = T::zero();
            for ((k, &l), &gj) in dst.iter_mut().zip(src).zip(&self.g) {
                *k = (l + gj - max).exp();
                acc += *k;
            }
            self.f[i] = r[i].ln() - (max + acc.ln());
            let scale = r[i] / acc;
            for k in dst.iter_mut() {
                *k *= scale;
            }
        }
        Ok(())
    }

    fn exact_col_step(&mut self, c: &[T]) -> Result<()> {
        let (n, m) = (self.n, self.m);
        let mut max = vec![T::neg_infinity(); m];
        for i in 0..n {
            let fi = self.f[i];
            for (mx, &v) in max.iter_mut().zip(&self.lk[i * m..(i + 1) * m]) {
                *mx = mx.max(v + fi);
            }
        }
        if let Some(j) = max.iter().position(|&v| v == T::neg_infinity()) {
            return Err(DriftError::DegenerateSupport {
                axis: "column",
                index: j,
                scheme: Some("sinkhorn"),
            });
        }
        let mut acc = vec![T::zero(); m];
        for i in 0..n {
            let fi = self.f[i];
            for ((s, &mx), &v) in acc.iter_mut().zip(&max).zip(&self.lk[i * m..(i + 1) * m]) {
                *s += (v + fi - mx).exp();
            }
        }
        for j in 0..m {
            self.g[j] = c[j].ln() - (max[j] + acc[j].ln());
        }
        self.rebuild();
        Ok(())
    }

    /// Column sums of `diag(a) · K̃`, left to right over rows.
    fn col_sums(&self, out: &mut [T]) {
        out.fill(T::zero());
        for i in 0..self.n {
            let ai = self.a[i];
            for (s, &k) in out.iter_mut().zip(&self.kt[i * self.m..(i + 1) * self.m]) {
                *s += ai * k;
            }
        }
    }

    fn col_violation(&self, sums: &[T], c: &[T]) -> T {
        sums.iter()
            .zip(&self.b)
            .zip(c)
            .fold(T::zero(), |acc, ((&s, &bj), &cj)| acc.max((s * bj - cj).abs()))
    }

    fn col_step(&mut self, sums: &[T], c: &[T]) -> Result<()> {
        let mut ok = true;
        for j in 0..self.m {
            self.b[j] = c[j] / sums[j];
            ok &= self.in_range(self.b[j]);
        }
        if !ok {
            for b in self.b.iter_mut() {
                *b = T::one();
            }
            self.absorb_rows_only();
            return self.exact_col_step(c);
        }
        if self.a.iter().any(|&v| !self.in_range(v)) {
            self.absorb();
        }
        Ok(())
    }

    /// Returns the row violation left by the previous half-step.
    fn row_step(&mut self, r: &[T]) -> Result<T> {
        let m = self.m;
        let mut viol = T::zero();
        let mut ok = true;
        for i in 0..self.n {
            let s = dot4(&self.kt[i * m..(i + 1) * m], &self.b);
            viol = viol.max((self.a[i] * s - r[i]).abs());
            self.a[i] = r[i] / s;
            ok &= self.in_range(self.a[i]);
        }
        if !ok {
            for a in self.a.iter_mut() {
                *a = T::one();
            }
            self.absorb_cols_only();
            self.exact_row_step(r)?;
        } else if self.b.iter().any(|&v| !self.in_range(v)) {
            self.absorb();
        }
        Ok(viol)
    }

    fn absorb_rows_only(&mut self) {
        for (f, a) in self.f.iter_mut().zip(self.a.iter_mut()) {
            *f += a.ln();
            *a = T::one();
        }
    }

    fn absorb_cols_only(&mut self) {
        for (g, b) in self.g.iter_mut().zip(self.b.iter_mut()) {
            *g += b.ln();
            *b = T::one();
        }
    }

    fn log_plan(&self) -> Array2<T> {
        let m = self.m;
        let la: Vec<T> = self.a.iter().zip(&self.f).map(|(&a, &f)| f + a.ln()).collect();
        let lb: Vec<T> = self.b.iter().zip(&self.g).map(|(&b, &g)| g + b.ln()).collect();
        Array2::from_shape_fn((self.n, m), |(i, j)| self.lk[i * m + j] + la[i] + lb[j])
    }
}

/// Dot product with four interleaved partial sums, combined as `(s0 + s1) + (s2 + s3)`
/// before the tail; the order is fixed, so results stay reproducible.
#[inline]
fn dot4<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = [T::zero(); 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        s[0] += x[0] * y[0];
        s[1] += x[1] * y[1];
        s[2] += x[2] * y[2];
        s[3] += x[3] * y[3];
    }
    let mut total = (s[0] + s[1]) + (s[2] + s[3]);
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        total += x * y;
    }
    total
}


/// Max-norm deviation of the row and column sums of `π` from `r` and `c`.
pub fn marginal_violation<T: Scalar>(pi: &CouplingMatrix<T>, m: &Marginals<T>) -> Result<(f64, f64)> {
    let (n, mm) = pi.dim();
    if m.r.len() != n || m.c.len() != mm {
        return Err(DriftError::DimensionMismatch {
            context: "marginal_violation shape",
            expected: n * mm,
            got: m.r.len() * m.c.len(),
        });
    }
    let lin = pi.to_linear();
    let mut row_err = T::zero();
    for (row, &ri) in lin.rows().into_iter().zip(&m.r) {
        let s: T = row.iter().copied().sum();
        row_err = row_err.max((s - ri).abs());
    }
    let mut col_sums = vec![T::zero(); mm];
    for row in lin.rows() {
        for (cs, &v) in col_sums.iter_mut().zip(row) {
            *cs += v;
        }
    }
    let col_err = col_sums
        .iter()
        .zip(&m.c)
        .fold(T::zero(), |acc, (&s, &cj)| acc.max((s - cj).abs()));
    Ok((row_err.as_f64(), col_err.as_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{gibbs_kernel, pairwise_cost, CostKind, PointCloud};
    use crate::rng::RngState;
    use ndarray::array;
    use rand::Rng;

    fn lin(a: Array2<f64>) -> CouplingMatrix<f64> {
        CouplingMatrix::from_linear(&a).unwrap()
    }

    fn random_kernel(n: usize, m: usize, seed: u64) -> CouplingMatrix<f64> {
        let mut rng = RngState::new(seed);
        let a = Array2::from_shape_fn((n, m), |_| rng.random_range(0.05..1.0));
        lin(a)
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
        assert_eq!(a.dim(), b.dim());
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn row_normalize_examples() {
        let p = row_normalize(&lin(array![[1.0, 1.0], [1.0, 1.0]])).unwrap();
        assert_close(&p.to_linear(), &array![[0.5, 0.5], [0.5, 0.5]], 1e-15);
        assert_eq!(p.status(), MarginalStatus::RowStochastic);

        let p = row_normalize(&lin(array![[2.0, 0.0], [0.0, 2.0]])).unwrap();
        assert_eq!(p.to_linear(), array![[1.0, 0.0], [0.0, 1.0]]);

        // Scalar softmax oracle: weights 1/(1+e^-4) and e^-4/(1+e^-4).
        let k = CouplingMatrix::from_log(array![[0.0, -4.0]], MarginalStatus::Raw, 0);
        let p = row_normalize(&k).unwrap().to_linear();
        let s = 1.0 / (1.0 + (-4.0f64).exp());
        assert!((p[[0, 0]] - s).abs() < 1e-15);
        assert!((p[[0, 1]] - (1.0 - s)).abs() < 1e-15);
        assert!((p[[0, 0]] - 0.98201).abs() < 1e-5);
    }

    #[test]
    fn row_normalize_degenerate_row() {
        let k = lin(array![[1.0, 1.0], [0.0, 0.0]]);
        assert_eq!(
            row_normalize(&k),
            Err(DriftError::DegenerateSupport {
                axis: "row",
                index: 1,
                scheme: None
            })
        );
    }

    #[test]
    fn two_sided_examples() {
        let p = two_sided_normalize(&lin(array![[1.0, 1.0], [1.0, 1.0]])).unwrap();
        assert_close(&p.to_linear(), &array![[0.5, 0.5], [0.5, 0.5]], 1e-15);

        let p = two_sided_normalize(&lin(array![[3.0, 1.0], [1.0, 3.0]])).unwrap().to_linear();
        assert!((p[[0, 0]] - p[[1, 1]]).abs() < 1e-15);
        assert!((p[[0, 1]] - p[[1, 0]]).abs() < 1e-15);
        for j in 0..2 {
            assert!((p.column(j).sum() - 1.0).abs() < 1e-15);
        }

        // Direct elementwise oracle for [[4,1],[1,1]].
        let k = [[4.0f64, 1.0], [1.0, 1.0]];
        let mut g = [[0.0f64; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let row = k[i][j] / (k[i][0] + k[i][1]);
                let col = k[i][j] / (k[0][j] + k[1][j]);
                g[i][j] = (row * col).sqrt();
            }
        }
        let p = two_sided_normalize(&lin(array![[4.0, 1.0], [1.0, 1.0]])).unwrap().to_linear();
        for i in 0..2 {
            let s = g[i][0] + g[i][1];
            for j in 0..2 {
                assert!((p[[i, j]] - g[i][j] / s).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_sided_degenerate_column() {
        let k = lin(array![[1.0, 0.0], [1.0, 0.0]]);
        assert!(matches!(
            two_sided_normalize(&k),
            Err(DriftError::DegenerateSupport { axis: "column", index: 1, .. })
        ));
    }

    #[test]
    fn sinkhorn_all_ones_uniform_fixed_point() {
        let k = lin(Array2::from_elem((3, 4), 1.0));
        let m = Marginals::uniform(3, 4).unwrap();
        let p = sinkhorn(&k, &m, SinkhornStop::converged()).unwrap().to_linear();
        for v in p.iter() {
            assert!((v - 1.0 / 12.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sinkhorn_single_half_step_is_row_softmax_over_n() {
        let k = random_kernel(6, 6, 3);
        let m = Marginals::uniform(6, 6).unwrap();
        let p1 = sinkhorn(&k, &m, SinkhornStop::HalfSteps(1)).unwrap().to_linear() * 6.0;
        let rn = row_normalize(&k).unwrap().to_linear();
        assert_close(&p1, &rn, 1e-12);
    }

    #[test]
    fn sinkhorn_rejects_bad_args() {
        let k = random_kernel(2, 2, 0);
        let m = Marginals::uniform(2, 2).unwrap();
        assert!(sinkhorn(&k, &m, SinkhornStop::HalfSteps(0)).is_err());
        let m3 = Marginals::uniform(3, 2).unwrap();
        assert!(sinkhorn(&k, &m3, SinkhornStop::HalfSteps(1)).is_err());
        let dead = lin(array![[1.0, 0.0], [1.0, 0.0]]);
        assert!(matches!(
            sinkhorn(&dead, &m, SinkhornStop::HalfSteps(2)),
            Err(DriftError::DegenerateSupport { axis: "column", .. })
        ));
    }

    #[test]
    fn sinkhorn_reports_non_convergence() {
        let x = PointCloud::from_f64_rows(&(0..30).map(|i| vec![i as f64 * 0.1]).collect::<Vec<_>>()).unwrap();
        let y = x.translated(&[0.05]).unwrap();
        let c = pairwise_cost(&x, &y, CostKind::SqEuclidean).unwrap();
        let k = gibbs_kernel(&c, 0.001).unwrap();
        let m = Marginals::uniform(30, 30).unwrap();
        let r = sinkhorn(
            &k,
            &m,
            SinkhornStop::Tolerance {
                tol: 1e-14,
                max_half_steps: 5,
            },
        );
        assert!(matches!(r, Err(DriftError::NotConverged { iterations: 5, .. })));
    }

    #[test]
    fn marginal_violation_examples() {
        let m = Marginals::uniform(2, 2).unwrap();
        let u = lin(Array2::from_elem((2, 2), 0.25));
        assert_eq!(marginal_violation(&u, &m).unwrap(), (0.0, 0.0));

        let k = lin(array![[4.0, 1.0], [1.0, 1.0]]);
        let rs = row_normalize(&k).unwrap().scaled(0.5, MarginalStatus::RowStochastic);
        let (re, ce) = marginal_violation(&rs, &m).unwrap();
        assert!(re < 1e-15);
        assert!(ce > 0.1);

        let out = sinkhorn_with_history(&k, &m, SinkhornStop::converged()).unwrap();
        assert!(out.row_violation < 1e-9 && out.col_violation < 1e-9);
    }

    #[test]
    fn nonuniform_marginals_are_honored() {
        let k = random_kernel(3, 2, 11);
        let m = Marginals::new(vec![0.5, 0.3, 0.2], vec![0.9, 0.1]).unwrap();
        let out = sinkhorn_with_history(&k, &m, SinkhornStop::converged()).unwrap();
        assert!(out.row_violation < 1e-9 && out.col_violation < 1e-9);
        assert!(Marginals::new(vec![0.5, 0.6], vec![1.0]).is_err());
        assert!(Marginals::new(vec![-0.5, 1.5], vec![1.0]).is_err());
    }

    #[test]
    fn row_violation_is_non_increasing_across_odd_steps() {
        for seed in 0..20 {
            let k = random_kernel(10, 10, 100 + seed);
            let m = Marginals::uniform(10, 10).unwrap();
            let out = sinkhorn_with_history(&k, &m, SinkhornStop::HalfSteps(41)).unwrap();
            // Entries at odd positions are violations of rows (recorded before row steps 3, 5, ...).
            let rows: Vec<f64> = out.history.iter().skip(1).step_by(2).copied().collect();
            // Down to the rounding floor of a 1/10 marginal.
            for w in rows.windows(2) {
                assert!(w[1] <= w[0] || w[1] < 1e-15, "seed {seed}: {:?}", w);
            }
            assert!(out.row_violation < 1e-15);
        }
    }

    #[test]
    fn sinkhorn_f32_runs() {
        let k = CouplingMatrix::<f32>::from_linear(&array![[2.0f32, 1.0], [1.0, 2.0]]).unwrap();
        let m = Marginals::uniform(2, 2).unwrap();
        let p = sinkhorn(
            &k,
            &m,
            SinkhornStop::Tolerance {
                tol: 1e-6,
                max_half_steps: 100,
            },
        )
        .unwrap()
        .to_linear();
        assert!((p[[0, 0]] - 1.0 / 3.0).abs() < 1e-6);
    }
}
