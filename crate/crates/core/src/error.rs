use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DriftError {
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate {axis} {index}: no finite kernel mass{}", scheme.map(|s| format!(" (scheme {s})")).unwrap_or_default())]
    DegenerateSupport {
        axis: &'static str,
        index: usize,
        scheme: Option<&'static str>,
    },

    #[error("sinkhorn did not converge after {iterations} half-steps (violation {violation:e}, tol {tol:e})")]
    NotConverged {
        iterations: usize,
        violation: f64,
        tol: f64,
    },

    #[error("simulation blew up at step {step}, particle {particle} (scheme {scheme}, tau {tau})")]
    BlowUp {
        step: usize,
        particle: usize,
        scheme: String,
        tau: f64,
    },

    #[error("training diverged: loss is NaN at iteration {iteration} ({config})")]
    NanLoss { iteration: usize, config: String },

    #[error("size {size} exceeds the configured cap {cap}")]
    CapExceeded { size: usize, cap: usize },

    #[error("theory check failed: {0}")]
    TheoryCheck(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T, E = DriftError> = std::result::Result<T, E>;
