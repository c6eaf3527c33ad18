use thiserror::Error;

/// Errors shared across the fitting, estimation, inference, and simulation layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Inputs have inconsistent shapes or violate a documented precondition.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Perfect (or quasi-) separation: the weighted logistic fit diverged or a
    /// positive-weight fitted probability pinned outside [1e-10, 1-1e-10].
    #[error("separation in weighted logistic fit: {0}")]
    Separation(String),

    /// The weighted information matrix is numerically singular.
    #[error("rank-deficient information matrix (reciprocal condition {rcond:.3e})")]
    Rank { rcond: f64 },

    /// The generic Newton solver ran out of iterations or could not reduce the score.
    #[error("estimating equation did not converge after {iterations} iterations (score max-norm {score_norm:.3e})")]
    Convergence { iterations: u32, score_norm: f64 },

    /// The generic Newton solver hit a numerically singular Jacobian.
    #[error("singular jacobian at iteration {iteration} (reciprocal condition {rcond:.3e})")]
    SingularJacobian { iteration: u32, rcond: f64 },

    /// A response or exposure class required by a fit has no usable rows.
    #[error("empty class: {0}")]
    EmptyClass(String),

    /// A weighted arm mean is non-finite or has no supporting rows.
    #[error("degenerate arm: {0}")]
    DegenerateArm(String),

    /// Fewer than half of the bootstrap replicates produced a usable estimate.
    #[error("only {usable} of {total} bootstrap replicates usable")]
    InsufficientReplicates { usable: usize, total: usize },

    /// An argument left the open unit interval where a probability is required.
    #[error("domain error: {0}")]
    Domain(String),

    /// More than 20% of the replications in one scenario/method cell failed.
    #[error("scenario '{scenario}', method '{method}': {failed} of {reps} replications failed")]
    ExcessiveFailures {
        scenario: String,
        method: String,
        failed: usize,
        reps: usize,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
