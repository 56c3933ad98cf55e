//! Simulation, verification and modulation of learned vector fields.

mod field;
mod integrate;
mod modulate;
mod sequential;
mod tube;

use thiserror::Error;

pub use field::{BoundingBox, ClosureField, Dynamics, Field, PolyField};
pub use integrate::{
    integrate_field, rk4_step, ExitReason, IntegrationOptions, SimTrajectory, Termination,
    DEFAULT_STEPS_PER_HORIZON,
};
pub use modulate::{
    default_alpha, modulate, ModulatedField, ObstacleChannel, ObstacleField, ObstacleFrame,
    ObstacleSnapshot, DEFAULT_DECAY, DEFAULT_EXCLUSION_RADIUS,
};
pub use sequential::{compose_sequential, SequentialPlan, SequentialRun};
pub use tube::{
    contraction_residual, metric_distance, residual_polynomials, tube_radius, TubeEstimate,
    TubeRadius,
};

#[derive(Debug, Error)]
pub enum DynError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("invalid obstacle field: {0}")]
    InvalidObstacles(String),
    #[error("trajectory leaves the region at t = {t}")]
    OutsideRegion { t: f64 },
    #[error("empty field list")]
    NoFields,
    #[error(transparent)]
    Poly(#[from] crate::polyalg::PolyError),
}
