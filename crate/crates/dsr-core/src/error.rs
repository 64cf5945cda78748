use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("integration diverged at step {step} ({system})")]
    IntegrationDiverged { system: String, step: usize },

    #[error("orbit diverged at step {step}")]
    OrbitDiverged { step: usize },

    #[error("singular matrix: {0}; a positive readout regularizer (reg > 0) makes the inversion well-posed")]
    Singular(String),

    #[error("insufficient data: {0}")]
    Data(String),

    #[error("no positive Lyapunov exponent (lambda_max = {lambda_max}); the system is not chaotic and the sparse forcing interval is undefined")]
    NoPositiveExponent { lambda_max: f64 },

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
