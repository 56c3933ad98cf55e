use std::fmt;

use serde::{Deserialize, Serialize};

use super::{BenchConfig, GoalMetrics, GridMetrics, ReproductionMetrics, TimingMetrics};

/// Row labels of the text table, in print order.
pub const TABLE_ROWS: [&str; 13] = [
    "TrainingTrajectoryError",
    "TrainingVelocityError",
    "TestTrajectoryError",
    "TestVelocityError",
    "DistanceToGoal",
    "DurationToGoal",
    "NumberReachedGoal",
    "GridDuration (sec)",
    "GridFractionReachedGoal",
    "GridDistanceToGoal",
    "GridDTWD (x10^4)",
    "TrainingTime",
    "IntegrationSpeed",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    /// The configuration with the goal resolved.
    pub config: BenchConfig,
    pub training: ReproductionMetrics,
    pub test: Option<ReproductionMetrics>,
    pub goal: GoalMetrics,
    pub grid: GridMetrics,
    pub timing: TimingMetrics,
}

fn num(v: f64) -> String {
    format!("{v:.4}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "-".into())
}

impl BenchmarkReport {
    /// `(label, value)` pairs in the order of [`TABLE_ROWS`].
    pub fn rows(&self) -> Vec<(&'static str, String)> {
        let values = [
            num(self.training.trajectory_error),
            num(self.training.velocity_error),
            opt(self.test.map(|t| t.trajectory_error)),
            opt(self.test.map(|t| t.velocity_error)),
            num(self.goal.distance_to_goal),
            opt(self.goal.duration_to_goal),
            format!("{}/{}", self.goal.reached, self.goal.total),
            opt(self.grid.duration),
            num(self.grid.fraction_reached),
            num(self.grid.distance_to_goal),
            num(self.grid.dtw_distance / 1e4),
            opt(self.timing.training_time),
            num(self.timing.integration_speed),
        ];
        TABLE_ROWS.iter().copied().zip(values).collect()
    }
}

impl fmt::Display for BenchmarkReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = self.rows();
        let width = TABLE_ROWS.iter().map(|r| r.len()).max().unwrap_or(0);
        let section = |f: &mut fmt::Formatter<'_>, title: &str| writeln!(f, "{title}");
        for (k, (label, value)) in rows.iter().enumerate() {
            match k {
                0 => section(f, "Reproduction Accuracy")?,
                4 => section(f, "Stability")?,
                11 => section(f, "Training and Integration Speed (in seconds)")?,
                _ => {}
            }
            writeln!(f, "  {label:<width$}  {value}")?;
        }
        Ok(())
    }
}
