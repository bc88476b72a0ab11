use thiserror::Error;

/// Errors produced by the phase-field library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("nonpositive radicand {value} at cell ({i}, {j})")]
    NonPositiveRadicand { i: usize, j: usize, value: f64 },

    #[error("nonpositive SAV radicand E1 + C0 = {0}")]
    SavRadicand(f64),

    #[error("linear solver `{label}` did not converge: {iterations} iterations, relative residual {residual:e}")]
    NotConverged {
        label: String,
        iterations: usize,
        residual: f64,
    },

    #[error("rank correction singular (|det| = {det:e}, scale {scale:e})")]
    SingularCorrection { det: f64, scale: f64 },

    #[error("left linear regime: amplitude {amplitude:e} exceeds {limit:e}")]
    LeftLinearRegime { amplitude: f64, limit: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
