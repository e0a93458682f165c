use thiserror::Error;

/// Errors raised by samplers, targets, metrics and the finite-state oracle.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("no-gradient: target `{0}` does not provide a gradient")]
    NoGradient(String),

    #[error("domain: non-finite evaluation at {0:?}")]
    Domain(Vec<f64>),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A sampler produced a non-finite state or gradient.
    #[error("divergence: non-finite state or gradient at {state:?}")]
    Divergence { state: Vec<f64> },

    #[error("potential-undefined: log G is -inf or NaN at the source state")]
    PotentialUndefined,

    #[error("empty-support: every Boltzmann-Gibbs weight is zero")]
    EmptySupport,

    #[error("reducible-or-periodic: power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    ReducibleOrPeriodic { iterations: usize, residual: f64 },

    #[error("empty-level-set: no state satisfies U(x) <= {level}")]
    EmptyLevelSet { level: f64 },

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
