use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pole in {what}: spectral parameter {value} is within the pole guard")]
    Pole { what: &'static str, value: Complex64 },

    #[error("singular matrix: {0}")]
    Singular(&'static str),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid with {have} points is too small for a {need}-point stencil")]
    GridTooSmall { have: usize, need: usize },

    #[error("Casimir constraint cannot be met: {0}")]
    CasimirUnreachable(String),

    #[error("branch singularity at index {index}: |c + S_z| = {value:e}")]
    BranchSingularity { index: usize, value: f64 },

    #[error("no bracket table entry for ({0}, {1})")]
    UnknownBracket(String, String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("coordinate singularity: {0}")]
    CoordinateSingularity(&'static str),

    #[error("index error: {0}")]
    Index(String),

    #[error("boundary-degenerate configuration: {0}")]
    BoundaryDegenerate(String),

    #[error("evolution became unstable at step {step}: {reason}")]
    Instability { step: usize, reason: String },

    #[error("boundary condition violated: residual {residual:e} exceeds {threshold:e}")]
    BoundaryViolation { residual: f64, threshold: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
