mod common;

use common::{brute_force_assignment, max_abs_diff, uniform_cloud};
use drift_core::metrics::{assignment_cost, solve_assignment};
use drift_core::*;
use ndarray::Array2;
use rand::Rng;

#[test]
fn assignment_equals_brute_force_minimum() {
    let mut rng = RngState::new(2024);
    for trial in 0..100 {
        let n = 1 + trial % 7;
        let cost = if trial % 3 == 0 {
            // Small integers make ties common.
            Array2::from_shape_fn((n, n), |_| rng.random_range(0..5) as f64)
        } else {
            let x = uniform_cloud(n, 2, &mut rng);
            let y = uniform_cloud(n, 2, &mut rng);
            pairwise_cost(&x, &y, CostKind::SqEuclidean).unwrap().values().to_owned()
        };
        let perm = solve_assignment(cost.view()).unwrap();
        let mut seen = perm.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..n).collect::<Vec<_>>());
        let solver = perm.iter().enumerate().fold(0.0, |acc, (i, &j)| acc + cost[[i, j]]);
        assert_eq!(solver, brute_force_assignment(&cost), "trial {trial}");
        assert_eq!(assignment_cost(cost.view(), &perm), solver / n as f64);
    }
}

#[test]
fn sinkhorn_against_long_run_oracle() {
    let mut rng = RngState::new(31);
    let (x, y): (PointCloud64, PointCloud64) = flow_instance(100, &mut rng).unwrap();
    let k = gibbs_kernel(&pairwise_cost(&x, &y, CostKind::Euclidean).unwrap(), 0.1).unwrap();
    let m = Marginals::uniform(100, 100).unwrap();
    let oracle = sinkhorn_with_history(&k, &m, SinkhornStop::HalfSteps(2001)).unwrap();

    let short = sinkhorn_with_history(&k, &m, SinkhornStop::HalfSteps(31)).unwrap();
    assert_eq!(short.history.len(), 30);
    // Row steps leave a column violation that shrinks monotonically.
    let col: Vec<f64> = short.history.iter().step_by(2).copied().collect();
    for w in col.windows(2) {
        assert!(w[1] <= w[0], "{col:?}");
    }
    assert!(short.col_violation >= oracle.col_violation);
    assert!(oracle.col_violation < 1e-12, "{}", oracle.col_violation);

    let converged = sinkhorn(&k, &m, SinkhornStop::converged()).unwrap();
    let diff = max_abs_diff(&converged.to_linear(), &oracle.plan.to_linear());
    assert!(diff < 1e-6, "entrywise gap {diff}");
}
