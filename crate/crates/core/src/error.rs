use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum HjbError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite coefficient in mode {mode}, control #{control} at x = {x:?}")]
    Domain {
        mode: usize,
        control: usize,
        x: Vec<f64>,
    },

    #[error("unsupported oracle: {0}")]
    UnsupportedOracle(String),

    #[error("Riccati blow-up at t = {t}: {reason}")]
    RiccatiBlowUp { t: f64, reason: String },

    #[error("decomposition error in mode {mode}: smallest eigenvalue of sigma sigma^T - a is {eigenvalue:e}")]
    Decomposition { mode: usize, eigenvalue: f64 },

    #[error("factorization error: {0}")]
    Factorization(String),

    #[error("weight error: {0}")]
    Weight(String),

    #[error("non-finite integrand at {location:?}")]
    NonFinite { location: Vec<f64> },

    #[error("step size h = {h} rejected: {reason}")]
    StepSize { h: f64, reason: String },

    #[error("time {t} is not on the time grid")]
    TimeIndex { t: f64 },

    #[error("state error: {0}")]
    State(String),

    #[error("regression failed at t = {t}, omega = {omega}, mode = {mode}: {reason}")]
    Regression {
        t: f64,
        omega: usize,
        mode: usize,
        reason: String,
    },

    #[error("report error: {0}")]
    Report(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HjbError {
    /// True for errors caused by bad input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            HjbError::Config(_)
                | HjbError::Dimension(_)
                | HjbError::UnsupportedOracle(_)
                | HjbError::StepSize { .. }
                | HjbError::TimeIndex { .. }
                | HjbError::Json(_)
                | HjbError::Report(_)
        )
    }
}

pub type Result<T, E = HjbError> = std::result::Result<T, E>;
