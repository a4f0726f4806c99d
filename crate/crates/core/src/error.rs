use thiserror::Error;

/// Errors raised by model construction, the solvers and the tests.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("design is numerically rank deficient (smallest/largest singular value = {ratio:.3e})")]
    RankDeficient { ratio: f64 },

    #[error("group size k = {k} must lie in [1, d = {d}]")]
    BadGroupSize { k: usize, d: usize },

    #[error("design has n = {n} rows but d = {d} columns; need n > d")]
    TooFewRows { n: usize, d: usize },

    #[error("response lies in the nuisance column space or the full model fits exactly; conditional tests are undefined")]
    DegenerateResidual,

    #[error("solver did not converge after {iterations} iterations (KKT residual {kkt:.3e})")]
    NotConverged { iterations: usize, kkt: f64 },

    #[error("f-inverse is set valued at b = 0")]
    ZeroInput,

    #[error("gradient of f-inverse is numerically singular (condition number {cond:.3e})")]
    SingularGradient { cond: f64 },

    #[error("unsupported regime: {0}")]
    BadRegime(&'static str),

    #[error("oracle direction is undefined when the tested coefficients are all zero")]
    NullDirection,

    #[error("level {0} must lie strictly between 0 and 1")]
    BadLevel(f64),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by numerical trouble rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::DegenerateResidual
                | Error::NotConverged { .. }
                | Error::SingularGradient { .. }
        )
    }
}
