use thiserror::Error;

/// Coarse error classes, used by the command line runner to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numeric,
    Hypothesis,
}

#[derive(Debug, Error)]
pub enum LabError {
    #[error("evaluation failure at theta={theta:?}, p={p:?}: {what}")]
    Evaluation { theta: Vec<f64>, p: Vec<f64>, what: String },

    #[error("integrator step failed at t={t}: {reason} (try a smaller step)")]
    StepFailure { t: f64, reason: String },

    #[error("{context}: Newton did not converge (residual {residual:e} after {iterations} iterations)")]
    NewtonFailure {
        context: String,
        residual: f64,
        iterations: usize,
    },

    #[error("no minimizer found (best candidate value {best_value}, gradient norm {best_gradient:e})")]
    NoMinimizer { best_value: f64, best_gradient: f64 },

    #[error("torus construction failed at node {node}: {reason}")]
    TorusConstruction { node: usize, reason: String },

    #[error("frame overflow, last valid time {last_valid_t}")]
    Overflow { last_valid_t: f64 },

    #[error("invalid Lagrangian plane: {0}")]
    InvalidPlane(String),

    #[error("symplectic consistency check failed: {0}")]
    SymplecticConsistency(String),

    #[error("iterate {index} escaped the window")]
    WindowEscape { index: usize },

    #[error("invariance solver did not converge (residual history {history:?})")]
    NonConvergence { history: Vec<f64> },

    #[error("Fourier cutoff too large: small divisor {divisor:e} at mode {mode:?}")]
    CutoffTooLarge { divisor: f64, mode: Vec<i64> },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl LabError {
    pub fn class(&self) -> ErrorClass {
        match self {
            LabError::Config(_) | LabError::Precondition(_) => ErrorClass::Config,
            LabError::HypothesisViolated(_) | LabError::SymplecticConsistency(_) => ErrorClass::Hypothesis,
            _ => ErrorClass::Numeric,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
