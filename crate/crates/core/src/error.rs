//! Error types shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("obstacle closure touches the cell boundary (distance to boundary < one grid spacing)")]
    ObstacleTouchesBoundary,
    #[error("no cell is inside the obstacle at this resolution")]
    EmptyObstacle,
    #[error("no cell is fluid at this resolution")]
    EmptyFluid,
    #[error("obstacle occupies less than one cell at this resolution")]
    ResolutionTooCoarse,
    #[error("1/eps = {inv_eps} is not an integer: omega cannot be tiled by eps-cells")]
    IncompatibleTiling { inv_eps: f64 },
    #[error("eps = {eps} must be strictly smaller than h = {h}")]
    EpsNotBelowH { eps: f64, h: f64 },
    #[error("resolution too coarse: {0}")]
    InvalidResolution(String),
    #[error("point lies on a boundary of the eps-cell lattice")]
    OnCellBoundary,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("no Dirichlet surface anywhere: the periodic problem is singular")]
    SingularProblem,
    #[error("solver did not reach tolerance {tol:e} in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64, tol: f64 },
    #[error("fields live on different geometries")]
    GeometryMismatch,
    #[error("inputs are inconsistent: {0}")]
    InconsistentInputs(String),
    #[error("invariant violated: {property} (residual {residual:e}, allowed {allowed:e})")]
    InvariantViolation { property: String, residual: f64, allowed: f64 },
    #[error("effective matrix K1 is not positive definite (eigenvalues {eig0:e}, {eig1:e})")]
    NotPositiveDefinite { eig0: f64, eig1: f64 },
    #[error("need at least two runs with distinct eps for a slope fit")]
    InsufficientRuns,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config validation error: {0}")]
    Validation(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}
