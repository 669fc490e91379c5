//! Sparse inverse-Cholesky factorization of kernel matrices containing
//! derivative measurements, and a Gauss-Newton Gaussian-process solver for
//! nonlinear PDEs built on top of it.
//!
//! The pipeline is: order measurements coarse-to-fine ([`geometry`],
//! [`measurements`]), build a distance-based sparsity pattern and aggregate it
//! into supernodes, compute the KL-optimal sparse factor `U` with
//! `K^{-1} ≈ Pᵀ U Uᵀ P` ([`factorization`]), and use the factor both as a fast
//! covariance operator and as a pCG preconditioner inside the Gauss-Newton
//! loop ([`linsolve`], [`pde`]).

pub mod factorization;
pub mod geometry;
pub mod kernels;
pub mod linsolve;
pub mod measurements;
pub mod pde;

pub use factorization::{SparseUpperFactor, SparsityPattern, SupernodeSet};
pub use geometry::{ConditioningSet, Ordering, PointSet};
pub use kernels::{DiffOp, KernelSpec, MaternNu};
pub use linsolve::{LinearOperator, PcgReport};
pub use measurements::{JacobianRows, Measurement, MeasurementLayout, PdeKind};
pub use pde::{GnConfig, PdeProblem, Solution};

/// Errors shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point set contains duplicate points (indices {0} and {1})")]
    DuplicatePoints(usize, usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unsupported derivative order {0} (max 2 per argument)")]
    UnsupportedDerivative(usize),
    #[error("supernode block {supernode} is not positive definite")]
    NotPositiveDefinite { supernode: usize },
    #[error("matrix is not positive definite")]
    NotPositiveDefiniteDense,
    #[error("zero diagonal entry in triangular factor at column {0}")]
    ZeroDiagonal(usize),
    #[error("pCG breakdown: non-positive curvature at iteration {iteration}")]
    PcgBreakdown { iteration: usize },
    #[error("Gauss-Newton failure at iteration {iteration}: {source}")]
    GaussNewton {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
