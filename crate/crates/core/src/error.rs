//! Error type shared across the library.

use thiserror::Error;

/// Errors surfaced by validation, estimation, and optimization routines.
#[derive(Debug, Error)]
pub enum GapError {
    /// Vector/matrix dimensions are inconsistent.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    /// A Cholesky factor has entries above the diagonal.
    #[error("matrix is not lower triangular")]
    NotLowerTriangular,
    /// A Cholesky factor has a diagonal entry below the nonsingularity floor.
    #[error("Cholesky diagonal entry {index} has magnitude below {floor:e}")]
    ZeroDiagonal { index: usize, floor: f64 },
    /// A square matrix was required.
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    /// A symmetric positive definite matrix was required.
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),
    /// Two grid densities do not share the same nodes.
    #[error("grids do not match")]
    GridMismatch,
    /// Geodesic between equal or antipodal points is not unique.
    #[error("no canonical geodesic: points are equal or antipodal")]
    AntipodalOrEqual,
    /// Mixture specification violates its invariants.
    #[error("invalid mixture specification: {0}")]
    InvalidSpec(String),
    /// Correlation outside (-1, 1).
    #[error("correlation must satisfy |rho| < 1, got {0}")]
    BadCorrelation(f64),
    /// All importance weights underflowed.
    #[error("degenerate importance weights: all below 1e-300")]
    DegenerateWeights,
    /// The covariance-direction operator lost column rank (singular Cholesky factor).
    #[error("tangent operator is rank deficient (singular Cholesky factor)")]
    RankDeficient,
    /// A gradient step left the valid region even after retries.
    #[error("step produced a singular Cholesky factor after {retries} halvings")]
    StepProducedSingularL { retries: usize },
    /// An iterative solver did not reach its tolerance.
    #[error("no convergence: {0}")]
    NoConvergence(String),
    /// A Hessian that must be definite was not.
    #[error("Hessian is not definite at the candidate mode")]
    IndefiniteHessian,
    /// Parameter outside the mathematical domain of a special function.
    #[error("domain error: {0}")]
    DomainError(String),
}

pub type Result<T> = std::result::Result<T, GapError>;
