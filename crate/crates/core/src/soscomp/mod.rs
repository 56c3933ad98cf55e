//! Exact compilation of "symmetric matrix polynomial is PSD on `[0, T]`"
//! into Gram-matrix PSD blocks plus linear equalities.
//!
//! A univariate matrix polynomial `P` of degree `D` is PSD on `[0, T]` iff
//!
//! ```text
//! D odd:   P(t) = t V(t) + (T - t) W(t),      deg V, W <= D - 1
//! D even:  P(t) = V(t) + t (T - t) W(t),      deg V <= D, deg W <= D - 2
//! ```
//!
//! with `V`, `W` sum-of-squares matrices. Each SOS matrix is written as
//! `Z(t)' G Z(t)` with `Z = [T_0(s) I, ..., T_h(s) I]` in the Chebyshev basis
//! of `s = 2t/T - 1`, so positivity reduces to `G` PSD plus coefficient
//! matching.

mod certificate;
mod compile;

pub use certificate::{
    min_eig_on_grid, verify_certificate, CertificateStatus, CertificateTolerance, GramBlock,
    GramDecomposition,
};
pub use compile::{decide_sosm, sosm_on_interval, Parity, SosmBlock, SosmDecision, SosmLayout};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::conic::ConicError;
use crate::polyalg::{PolyError, UniPolyMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SosError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Conic(#[from] ConicError),
    #[error("matrix polynomials disagree on {what}")]
    Inconsistent { what: &'static str },
    #[error("expected {expected} decision columns, got {got}")]
    ColumnCount { expected: usize, got: usize },
    #[error("grid needs at least 2 points, got {0}")]
    GridTooSmall(usize),
}

/// Symmetric matrix polynomial in `t` whose coefficients are affine in a
/// vector of decision variables: `P(t; c) = P_0(t) + sum_k c_k P_k(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMatrixPolynomial {
    constant: UniPolyMatrix,
    terms: Vec<UniPolyMatrix>,
}

impl LinearMatrixPolynomial {
    pub fn new(constant: UniPolyMatrix, terms: Vec<UniPolyMatrix>) -> Result<Self, SosError> {
        for t in &terms {
            if t.size() != constant.size() {
                return Err(SosError::Inconsistent { what: "size" });
            }
            if (t.horizon() - constant.horizon()).abs() > 1e-12 * constant.horizon() {
                return Err(SosError::Inconsistent { what: "horizon" });
            }
        }
        Ok(Self { constant, terms })
    }

    /// A polynomial with no decision variables.
    pub fn fixed(p: UniPolyMatrix) -> Self {
        Self {
            constant: p,
            terms: Vec::new(),
        }
    }

    pub fn size(&self) -> usize {
        self.constant.size()
    }

    pub fn horizon(&self) -> f64 {
        self.constant.horizon()
    }

    pub fn num_vars(&self) -> usize {
        self.terms.len()
    }

    pub fn constant(&self) -> &UniPolyMatrix {
        &self.constant
    }

    pub fn terms(&self) -> &[UniPolyMatrix] {
        &self.terms
    }

    /// Largest time degree after dropping coefficients below
    /// `tol * max|coeff|` of their own matrix polynomial.
    pub fn degree(&self, tol: f64) -> usize {
        std::iter::once(&self.constant)
            .chain(&self.terms)
            .map(|m| normalized_degree(m, tol))
            .max()
            .unwrap_or(0)
    }

    /// `P(t; c)` for concrete decision values.
    pub fn substitute(&self, c: &[f64]) -> Result<UniPolyMatrix, SosError> {
        if c.len() != self.terms.len() {
            return Err(SosError::ColumnCount {
                expected: self.terms.len(),
                got: c.len(),
            });
        }
        let mut acc = self.constant.clone();
        for (t, &ck) in self.terms.iter().zip(c) {
            if ck != 0.0 {
                acc = acc.add(&t.scale(ck));
            }
        }
        Ok(acc)
    }

    /// Replaces the constant term, keeping the variable terms.
    pub fn with_constant(&self, constant: UniPolyMatrix) -> Result<Self, SosError> {
        Self::new(constant, self.terms.clone())
    }
}

pub(crate) const DEGREE_TOL: f64 = 1e-14;

pub(crate) fn normalized_degree(m: &UniPolyMatrix, tol: f64) -> usize {
    let scale = m.max_abs_coeff();
    m.coeffs()
        .iter()
        .rposition(|c| c.amax() > tol * scale)
        .unwrap_or(0)
}

pub(crate) fn coeff_or_zero(m: &UniPolyMatrix, k: usize) -> DMatrix<f64> {
    m.coeffs()
        .get(k)
        .cloned()
        .unwrap_or_else(|| DMatrix::zeros(m.size(), m.size()))
}
