//! Standard-form conic programs and an operator-splitting solver for them.
//!
//! Programs have the form
//!
//! ```text
//! minimize    c'x
//! subject to  A x + s = b,  s in K
//! ```
//!
//! where `K` is a product of zero, nonnegative, second-order and PSD cones
//! laid out in row order. The solver applies ADMM to the homogeneous
//! self-dual embedding, which yields either an approximate primal-dual
//! solution or a certificate of infeasibility or unboundedness.

mod admm;
mod anderson;
mod builder;
mod cones;
mod linsys;
mod sparse;

pub use admm::solve;
pub use builder::{ProgramBuilder, RowBlock, SparseRow};
pub use cones::{project_psd, project_soc, smat, svec, svec_index, Cone};
pub use sparse::{SparseMatrix, Triplets};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConicError {
    #[error("constraint matrix has {rows} rows but cones cover {cone_rows}")]
    RowCount { rows: usize, cone_rows: usize },
    #[error("vector `{name}` has length {got}, expected {expected}")]
    VectorLength {
        name: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("warm start has inconsistent dimensions")]
    WarmStart,
    #[error("invalid solver settings: {0}")]
    Settings(String),
    #[error("malformed program dump: {0}")]
    Dump(String),
}

/// Initial iterate for the solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStart {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
}

/// `minimize c'x  s.t.  A x + s = b, s in K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeProgram {
    pub a: SparseMatrix,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub cones: Vec<Cone>,
    pub warm_start: Option<WarmStart>,
}

impl ConeProgram {
    pub fn new(
        a: SparseMatrix,
        b: Vec<f64>,
        c: Vec<f64>,
        cones: Vec<Cone>,
    ) -> Result<Self, ConicError> {
        let p = Self {
            a,
            b,
            c,
            cones,
            warm_start: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn num_vars(&self) -> usize {
        self.a.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn validate(&self) -> Result<(), ConicError> {
        let cone_rows: usize = self.cones.iter().map(Cone::rows).sum();
        if cone_rows != self.a.nrows() {
            return Err(ConicError::RowCount {
                rows: self.a.nrows(),
                cone_rows,
            });
        }
        if self.b.len() != self.a.nrows() {
            return Err(ConicError::VectorLength {
                name: "b",
                expected: self.a.nrows(),
                got: self.b.len(),
            });
        }
        if self.c.len() != self.a.ncols() {
            return Err(ConicError::VectorLength {
                name: "c",
                expected: self.a.ncols(),
                got: self.c.len(),
            });
        }
        if let Some(w) = &self.warm_start {
            if w.x.len() != self.a.ncols()
                || w.y.len() != self.a.nrows()
                || w.s.len() != self.a.nrows()
            {
                return Err(ConicError::WarmStart);
            }
        }
        Ok(())
    }

    /// JSON dump with `A` as sparse triplets, for cross-checking against
    /// external solvers.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ProgramDump {
            a: self.a.to_triplets(),
            b: self.b.clone(),
            c: self.c.clone(),
            cones: self.cones.clone(),
            warm_start: self.warm_start.clone(),
        })
        .expect("program dump serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ConicError> {
        let dump: ProgramDump =
            serde_json::from_str(text).map_err(|e| ConicError::Dump(e.to_string()))?;
        let p = Self {
            a: SparseMatrix::from_triplet_dump(&dump.a),
            b: dump.b,
            c: dump.c,
            cones: dump.cones,
            warm_start: dump.warm_start,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Serialize, Deserialize)]
struct ProgramDump {
    a: Triplets,
    b: Vec<f64>,
    c: Vec<f64>,
    cones: Vec<Cone>,
    #[serde(default)]
    warm_start: Option<WarmStart>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Relative tolerance on primal residual, dual residual and gap.
    pub accuracy: f64,
    pub max_iterations: usize,
    /// Initial dual weight: the `y` block of the iteration metric is
    /// `1 / scale`. Larger values favor primal feasibility.
    pub scale: f64,
    /// Update `scale` when primal and dual residuals drift apart.
    pub adaptive_scale: bool,
    /// Weight of the `x` block of the iteration metric.
    pub rho_x: f64,
    /// Over-relaxation factor in `(0, 2)`.
    pub relaxation: f64,
    /// Diagonal equilibration of `A` before iterating.
    pub equilibrate: bool,
    /// Tolerance on infeasibility/unboundedness certificates.
    pub infeasibility_tolerance: f64,
    /// Anderson acceleration memory; 0 disables acceleration.
    pub anderson_memory: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            accuracy: 1e-6,
            max_iterations: 25_000,
            scale: 0.1,
            adaptive_scale: true,
            rho_x: 1e-6,
            relaxation: 1.5,
            equilibrate: true,
            infeasibility_tolerance: 1e-7,
            anderson_memory: 10,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), ConicError> {
        if !(self.accuracy > 0.0) {
            return Err(ConicError::Settings("accuracy must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(ConicError::Settings(
                "max_iterations must be positive".into(),
            ));
        }
        if !(self.scale > 0.0) {
            return Err(ConicError::Settings("scale must be positive".into()));
        }
        if !(self.rho_x > 0.0) {
            return Err(ConicError::Settings("rho_x must be positive".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(ConicError::Settings("relaxation must lie in (0, 2)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// The iteration limit was hit with every residual within
    /// [`INACCURATE_FACTOR`] times the requested accuracy.
    OptimalInaccurate,
    Infeasible,
    Unbounded,
    IterationLimit,
}

impl SolveStatus {
    /// `Optimal` or `OptimalInaccurate`.
    pub fn is_solved(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::OptimalInaccurate)
    }
}

/// Slack on the accuracy test applied when the iteration limit is reached.
pub const INACCURATE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    pub status: SolveStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub solve_time_secs: f64,
}
