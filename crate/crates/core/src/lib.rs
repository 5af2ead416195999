//! Drift-field generative dynamics with one-sided, two-sided (geometric-mean) and
//! Sinkhorn coupling normalization.
//!
//! The numerical core is generic over the floating point type through [`Scalar`];
//! the `*64` / `*32` aliases below fix it to `f64` / `f32`.

pub mod coupling;
pub mod datasets;
pub mod drift;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod metrics;
pub mod nnet;
pub mod rng;
pub mod scalar;
pub mod theory;

pub use coupling::{
    marginal_violation, row_normalize, sinkhorn, sinkhorn_with_history, two_sided_normalize,
    CouplingMatrix, MarginalStatus, Marginals, SinkhornOutput, SinkhornStop, DEFAULT_MAX_HALF_STEPS,
    DEFAULT_SINKHORN_TOL, LONG_RUN_MAX_HALF_STEPS,
};
pub use datasets::{flow_instance, sample, sample_prior, ToyTarget};
pub use drift::{drift_field, level_l_drift, mean_of_drift, DriftConfig, DriftField, Level, Negatives, Scheme, SelfMask};
pub use error::{DriftError, Result};
pub use flow::{simulate, stop_gradient_euler_check, FlowTrajectory, Snapshot};
pub use geometry::{gibbs_kernel, mask_self_distances, pairwise_cost, CostKind, CostMatrix, PointCloud};
pub use metrics::{exact_w2sq, mode_coverage, sinkhorn_divergence, AssignmentResult, DivergenceMode, DivergenceValue};
pub use nnet::{drifting_loss_and_grad, final_samples, train, Activation, AdamState, Mlp, TrainConfig, TrainRecord};
pub use rng::RngState;
pub use scalar::Scalar;

pub type PointCloud64 = PointCloud<f64>;
pub type PointCloud32 = PointCloud<f32>;
pub type CostMatrix64 = CostMatrix<f64>;
pub type CouplingMatrix64 = CouplingMatrix<f64>;
pub type CouplingMatrix32 = CouplingMatrix<f32>;
pub type Marginals64 = Marginals<f64>;
pub type DriftConfig64 = DriftConfig<f64>;
pub type DriftConfig32 = DriftConfig<f32>;
pub type DriftField64 = DriftField<f64>;
pub type FlowTrajectory64 = FlowTrajectory<f64>;
pub type Mlp64 = Mlp<f64>;
pub type Mlp32 = Mlp<f32>;
