use thiserror::Error;

/// Errors raised by the models, integrators and solvers.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular mass matrix (|det M| = {det:.3e})")]
    SingularMassMatrix { det: f64 },

    #[error("singular impact map (|det Q+| = {det:.3e})")]
    SingularImpact { det: f64 },

    #[error("singular terminal cost: {0}")]
    SingularCost(String),

    #[error("input elimination is singular (q = {q:e})")]
    SingularElimination { q: f64 },

    #[error("integration exceeded {max_steps} steps at t = {t}")]
    NonConvergence { t: f64, max_steps: usize },

    #[error("integration diverged at t = {t}")]
    Divergence { t: f64 },

    #[error("passive gait search failed after {iterations} iterations (best residual {best_residual:.3e}): {reason}")]
    SeedFailure {
        iterations: usize,
        best_residual: f64,
        reason: String,
    },

    #[error("observability failure: {0}")]
    Observability(String),

    #[error("seed is inconsistent: |r|_inf = {norm:.3e}")]
    SeedInconsistency { norm: f64, residual: Vec<f64> },

    #[error("singular point: {0}")]
    SingularPoint(String),

    #[error("corrector did not converge in {iterations} iterations (|r|_inf = {residual:.3e})")]
    CorrectorFailure { iterations: usize, residual: f64 },

    #[error("continuation direction undefined: tangent has no parameter component")]
    DirectionUndefined,

    #[error("regularity violation: {0}")]
    Regularity(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("jacobian column {column}: {source}")]
    JacobianColumn {
        column: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}
