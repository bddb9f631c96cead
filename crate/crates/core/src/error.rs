use crate::model::StateVector;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared by all modules of the crate.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("non-finite input in {context}")]
    InvalidState { context: &'static str },

    #[error("drift produced a non-finite component {component} (S,I,R,beta order) at t={t}")]
    NonFiniteDrift { t: f64, component: usize },

    #[error("step {step} at t={t} produced a non-finite component {component}: state {state:?}")]
    NumericalOverflow {
        t: f64,
        step: usize,
        component: usize,
        state: [f64; 4],
    },

    #[error("replicate {replicate} failed: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{component} must be strictly positive, got {value}")]
    NonPositiveComponent { component: &'static str, value: f64 },

    #[error("denominator {name} = {value} is degenerate (|{name}| < {eps})")]
    DegenerateDenominator {
        name: &'static str,
        value: f64,
        eps: f64,
    },

    #[error("closed-form controls require {name} = 2, got {value}")]
    UnsupportedExponent { name: &'static str, value: f64 },

    #[error("steady-state search did not converge; best residual {best_residual:.3e} at {best:?}")]
    NoConvergence {
        best_residual: f64,
        best: StateVector,
    },

    #[error("non-finite integrand sample at t={t}")]
    NonFiniteSample { t: f64 },

    #[error("modularity is undefined on an edgeless graph")]
    UndefinedModularity,

    #[error("immunity level counts sum to {sum}, expected the node count {n}")]
    InvalidPartition { sum: usize, n: usize },

    #[error("distributions have {left} and {right} atoms; counts must match")]
    AtomCountMismatch { left: usize, right: usize },

    #[error("invalid distribution: {reason}")]
    InvalidDistribution { reason: String },

    #[error("invalid argument {name}: {reason}")]
    InvalidArgument { name: &'static str, reason: String },
}
