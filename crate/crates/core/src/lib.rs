//! Learning contracting polynomial vector fields from demonstrations.
//!
//! The crate fits a polynomial vector field to demonstration trajectories by
//! minimizing a continuous-time imitation loss subject to contraction
//! constraints along each demonstration. The constraints are univariate
//! matrix-polynomial positivity conditions, compiled exactly into a
//! semidefinite program and solved with an operator-splitting conic solver.

pub mod bench;
pub mod conic;
pub mod dynsys;
pub mod io;
pub mod learner;
pub mod polyalg;
pub mod soscomp;
