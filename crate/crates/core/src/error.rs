use thiserror::Error;

/// Failures raised by the geometric operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("point {0:?} lies outside the chart domain")]
    OutsideDomain(Vec<f64>),
    #[error("zero vector where a nonzero vector is required")]
    ZeroVector,
    #[error("vector is not admissible: {0}")]
    NotAdmissible(String),
    #[error("numeric breakdown: {0}")]
    NumericBreakdown(String),
    #[error("direction lies on the Lorentz branch (g(u, -W) = {0})")]
    BranchViolation(f64),
    #[error("mixed wind regime: F(-W) ranges over [{min}, {max}]")]
    MixedRegime { min: f64, max: f64 },
    #[error("covector is not in the image of the Legendre map: {0}")]
    NotInImage(String),
    #[error("iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("nonlinear Laplacian is undefined at a critical point")]
    UndefinedAtCriticalPoint,
    #[error("flow left the chart domain at t = {0}")]
    FlowLeftDomain(f64),
    #[error("vector field is not homothetic (sigma = {sigma}, residual = {residual})")]
    NotHomothetic { sigma: f64, residual: f64 },
    #[error("no fiber points found at level {0}")]
    FiberNotFound(f64),
    #[error("metric is not regular here: {0}")]
    NotRegular(String),
    #[error("immersion Jacobian is rank deficient (smallest singular value {0})")]
    RankDeficient(f64),
    #[error("path left the chart domain at t = {0}")]
    LeftDomain(f64),
    #[error("path left the conic domain at t = {0}")]
    LeftCone(f64),
    #[error("normal is not h-unit and h-orthogonal (defect {0})")]
    NotUnitNormal(f64),
    #[error("divergence of the wind is not constant (spread {0})")]
    DivergenceNotConstant(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unsupported operation: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, GeomError>;
