//! Polynomial algebra: dense multivariate polynomials over a graded-lex
//! monomial basis, univariate time polynomials in a Chebyshev basis, exact
//! composition of the two, and least-squares trajectory fitting.

mod basis;
mod multivariate;
mod trajectory;
mod univariate;

pub use basis::{binomial, MonomialBasis};
pub use multivariate::{eval_matrix, PolyMap, Polynomial};
pub use trajectory::{
    bounding_box_diagonal, compose, fit_trajectory, fit_trajectory_auto, monomial_curves,
    PolyTrajectory, MAX_AUTO_DEGREE,
};
pub use univariate::{chebyshev_values, UniPoly, UniPolyMatrix};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("coefficient vector has length {got}, basis has {expected}")]
    CoefficientLength { expected: usize, got: usize },
    #[error("interval end must be positive, got {0}")]
    NonPositiveInterval(f64),
    #[error("{samples} samples cannot determine a degree-{} fit", needed - 1)]
    InsufficientSamples { samples: usize, needed: usize },
    #[error("design matrix has rank {rank}, need {needed}")]
    RankDeficient { rank: usize, needed: usize },
    #[error("sample times must be nonnegative and strictly increasing")]
    NonIncreasingTimes,
    #[error("matrix polynomial coefficient is {rows}x{cols}, not square of the declared size")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix polynomial coefficient is not symmetric")]
    Asymmetric,
    #[error("empty input")]
    Empty,
}
