//! Complex vectors and matrices, unitary DFTs, the oversampled two-axis DFT
//! operator `Q`, block-Toeplitz covariance assembly `Q^H diag(c) Q`, and
//! Cholesky-based Hermitian positive-definite solves.

mod cholesky;
mod dft;
mod matrix;
mod toeplitz;

pub use cholesky::{hpd_solve, Cholesky};
pub use dft::{unitary_dft, unitary_idft, Dft2d};
pub use matrix::{inner, norm_sqr, HermitianMatrix};
pub use toeplitz::{QOperator, UraGeometry};

use thiserror::Error;

pub type C64 = num_complex::Complex64;

/// Length-`N` complex channel, observation or noise vector.
pub type ComplexVec = Vec<C64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("matrix is not positive definite: pivot {pivot} has value {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("covariance weight c[{index}] = {value} is not strictly positive")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("invalid array geometry: {0}")]
    Geometry(String),
}

pub type Result<T> = std::result::Result<T, LinalgError>;
