use thiserror::Error;

/// Errors raised across the identification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("assembly failed: {0}")]
    Assembly(String),
    #[error("unsupported damping: {0}")]
    UnsupportedDamping(String),
    #[error("integration failed at step {step}: {message}")]
    Integration { step: usize, message: String },
    #[error("integrator failure at t = {time:.6e} s: {message}")]
    IntegratorTolerance { time: f64, message: String },
    #[error("insufficient data: {0}")]
    Data(String),
    #[error("requested order {requested} exceeds numerical rank (singular value ratio {ratio:.3e})")]
    OrderTooHigh { requested: usize, ratio: f64 },
    #[error("driving point lies on a node of mode {mode}")]
    NodeOfMode { mode: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("Newton corrector did not converge: {0}")]
    NonConvergence(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("comparison failed: {0}")]
    Comparison(String),
    #[error("undefined input: {0}")]
    UndefinedInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by invalid user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Parameter(_)
                | Error::Config(_)
                | Error::UndefinedInput(_)
                | Error::Data(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Comparison(_)
        )
    }
}
