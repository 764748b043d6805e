use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Shapes of operators, states or Hilbert spaces do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Parameters are outside the domain of the model (negative rates, bad ratios, ...).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("zero thermal occupation has no finite temperature")]
    NoFiniteTemperature,

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("steady state is not unique: {0}")]
    DegenerateSteadyState(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("step size underflow at t = {t:e} s (h = {h:e} s, {steps} accepted steps)")]
    StepSizeUnderflow { t: f64, h: f64, steps: usize },

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateSteadyState(_)
                | Error::LinearSolve(_)
                | Error::StepSizeUnderflow { .. }
                | Error::NonConvergence(_)
        )
    }
}
