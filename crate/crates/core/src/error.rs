use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("(a = {a}, q = {q}) lies outside the first stability region")]
    NotStable { a: f64, q: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("Fourier coefficients not below {tol:e} at the cap n = {n_max_cap} (|C| = {reached:e})")]
    TruncationFailure { n_max_cap: usize, tol: f64, reached: f64 },

    #[error("trap calibration failed: {0}")]
    CalibrationFailure(String),

    #[error("invalid ion spacing {0}; must be positive")]
    InvalidSpacing(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid kick sequence: {0}")]
    InvalidSequence(String),

    #[error("integrator step size collapsed at t = {t} (h = {h:e})")]
    IntegratorFailure { t: f64, h: f64 },

    #[error("action-phase routes disagree: quadrature {quadrature} vs boundary {boundary}")]
    RouteMismatch { quadrature: f64, boundary: f64 },

    #[error("no integer candidate beat the cost ceiling {ceiling}")]
    NoCandidates { ceiling: f64 },

    #[error("{n_sdk} kicks at minimum spacing {spacing} do not fit in gate time {gate_time}")]
    InfeasibleSpacing { n_sdk: u64, spacing: f64, gate_time: f64 },

    #[error("no solution reached the fidelity floor {floor} (best fidelity {best})")]
    NoSolution { floor: f64, best: f64 },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
