//! Reproduction, stability and timing metrics over a demonstration set.

mod dtw;
mod report;

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynsys::{
    integrate_field, BoundingBox, DynError, Field, IntegrationOptions, SimTrajectory,
};
use crate::learner::Demonstration;

pub use dtw::dtw;
pub use report::{BenchmarkReport, TABLE_ROWS};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no demonstrations")]
    NoDemonstrations,
    #[error("demonstration {0} has fewer than two samples")]
    ShortDemonstration(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("invalid benchmark configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dyn(#[from] DynError),
}

/// Protocol parameters; every report embeds the configuration it used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Goal point; the mean demonstration end point when absent.
    pub goal: Option<Vec<f64>>,
    /// Radius of the goal ball, in data units.
    pub goal_radius: f64,
    /// Long-horizon runs last this many demonstration durations.
    pub horizon_multiple: f64,
    pub grid_starts: usize,
    /// Relative growth of the demonstration bounding box for grid starts.
    pub grid_inflation: f64,
    pub seed: u64,
    /// Integration steps per demonstration duration.
    pub steps_per_duration: f64,
    pub timing_runs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            goal: None,
            goal_radius: 1.0,
            horizon_multiple: 30.0,
            grid_starts: 16,
            grid_inflation: 0.25,
            seed: 2020,
            steps_per_duration: 5000.0,
            timing_runs: 5,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |what: &str| Err(BenchError::InvalidConfig(what.to_string()));
        if !(self.goal_radius > 0.0) {
            return bad("goal radius must be positive");
        }
        if !(self.horizon_multiple >= 1.0) {
            return bad("horizon multiple must be at least 1");
        }
        if !(self.grid_inflation >= 0.0) {
            return bad("grid inflation must be nonnegative");
        }
        if !(self.steps_per_duration >= 1.0) {
            return bad("steps per duration must be at least 1");
        }
        if self.timing_runs == 0 {
            return bad("timing needs at least one run");
        }
        Ok(())
    }

    pub fn resolve_goal(&self, demos: &[Demonstration]) -> Result<Vec<f64>, BenchError> {
        if let Some(g) = &self.goal {
            return Ok(g.clone());
        }
        check_demos(demos)?;
        let mut sum = DVector::zeros(demos[0].dim());
        for d in demos {
            sum += d.end();
        }
        Ok((sum / demos.len() as f64).iter().copied().collect())
    }
}

fn check_demos(demos: &[Demonstration]) -> Result<(), BenchError> {
    if demos.is_empty() {
        return Err(BenchError::NoDemonstrations);
    }
    for d in demos {
        if d.times.len() < 2 || d.duration() <= 0.0 {
            return Err(BenchError::ShortDemonstration(d.id.clone()));
        }
    }
    Ok(())
}

/// Integrates from the demonstration start for `multiple` durations.
fn replay(
    field: &dyn Field,
    demo: &Demonstration,
    multiple: f64,
    cfg: &BenchConfig,
) -> Result<SimTrajectory, BenchError> {
    let duration = demo.duration();
    let opts = IntegrationOptions {
        record_velocities: false,
        ..IntegrationOptions::for_horizon(duration * multiple)
            .with_dt(duration / cfg.steps_per_duration)
    };
    Ok(integrate_field(field, demo.start().as_slice(), &opts)?)
}

/// Demonstration velocities: the measured ones when present, otherwise
/// central differences (one-sided at the ends).
pub fn demo_velocities(demo: &Demonstration) -> Vec<DVector<f64>> {
    if let Some(v) = &demo.velocities {
        return v.clone();
    }
    let (t, x) = (&demo.times, &demo.positions);
    let n = t.len();
    (0..n)
        .map(|k| {
            let (a, b) = match k {
                0 => (0, 1),
                k if k + 1 == n => (n - 2, n - 1),
                k => (k - 1, k + 1),
            };
            (&x[b] - &x[a]) / (t[b] - t[a])
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReproductionMetrics {
    pub trajectory_error: f64,
    pub velocity_error: f64,
}

/// Per-demonstration mean distance between demonstration and replay at the
/// demonstration sample times, averaged over demonstrations. Replay
/// velocities are field values at the replayed states.
pub fn reproduction_metrics(
    field: &dyn Field,
    demos: &[Demonstration],
    cfg: &BenchConfig,
) -> Result<ReproductionMetrics, BenchError> {
    check_demos(demos)?;
    let per_demo: Vec<(f64, f64)> = demos
        .par_iter()
        .map(|demo| -> Result<(f64, f64), BenchError> {
            let sim = replay(field, demo, 1.0, cfg)?;
            let vel = demo_velocities(demo);
            let times = demo.relative_times();
            let mut pos_err = 0.0;
            let mut vel_err = 0.0;
            for (k, t) in times.iter().enumerate() {
                let x = sim.interpolate(*t);
                pos_err += (&demo.positions[k] - &x).norm();
                vel_err += (&vel[k] - field.eval(x.as_slice())).norm();
            }
            let samples = times.len() as f64;
            Ok((pos_err / samples, vel_err / samples))
        })
        .collect::<Result<_, _>>()?;
    let m = demos.len() as f64;
    Ok(ReproductionMetrics {
        trajectory_error: per_demo.iter().map(|p| p.0).sum::<f64>() / m,
        velocity_error: per_demo.iter().map(|p| p.1).sum::<f64>() / m,
    })
}

pub fn trajectory_error(
    field: &dyn Field,
    demos: &[Demonstration],
    cfg: &BenchConfig,
) -> Result<f64, BenchError> {
    reproduction_metrics(field, demos, cfg).map(|r| r.trajectory_error)
}

pub fn velocity_error(
    field: &dyn Field,
    demos: &[Demonstration],
    cfg: &BenchConfig,
) -> Result<f64, BenchError> {
    reproduction_metrics(field, demos, cfg).map(|r| r.velocity_error)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalMetrics {
    /// Mean distance to the goal after one demonstration duration.
    pub distance_to_goal: f64,
    /// Mean time to enter the goal ball over the long-horizon replays that
    /// do; `None` when none does.
    pub duration_to_goal: Option<f64>,
    pub reached: usize,
    pub total: usize,
}

pub fn goal_metrics(
    field: &dyn Field,
    demos: &[Demonstration],
    goal: &[f64],
    cfg: &BenchConfig,
) -> Result<GoalMetrics, BenchError> {
    check_demos(demos)?;
    let goal_v = DVector::from_column_slice(goal);
    let per_demo: Vec<(f64, Option<f64>)> = demos
        .par_iter()
        .map(|demo| -> Result<(f64, Option<f64>), BenchError> {
            let long = replay(field, demo, cfg.horizon_multiple, cfg)?;
            let at_duration = long.interpolate(demo.duration());
            Ok((
                (at_duration - &goal_v).norm(),
                long.time_to_reach(goal, cfg.goal_radius),
            ))
        })
        .collect::<Result<_, _>>()?;
    let reached: Vec<f64> = per_demo.iter().filter_map(|p| p.1).collect();
    Ok(GoalMetrics {
        distance_to_goal: per_demo.iter().map(|p| p.0).sum::<f64>() / demos.len() as f64,
        duration_to_goal: (!reached.is_empty())
            .then(|| reached.iter().sum::<f64>() / reached.len() as f64),
        reached: reached.len(),
        total: demos.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMetrics {
    pub starts: Vec<Vec<f64>>,
    /// Mean time to the goal ball over starts that reach it.
    pub duration: Option<f64>,
    pub fraction_reached: f64,
    /// Mean final distance to the goal.
    pub distance_to_goal: f64,
    /// Mean over starts of the smallest DTW distance to a demonstration.
    pub dtw_distance: f64,
    pub horizon: f64,
}

/// Seeded uniform starts in the demonstration bounding box grown by
/// `grid_inflation` about its center.
pub fn grid_starts(
    demos: &[Demonstration],
    cfg: &BenchConfig,
) -> Result<Vec<Vec<f64>>, BenchError> {
    check_demos(demos)?;
    let bbox = BoundingBox::from_points(demos.iter().flat_map(|d| d.positions.iter()))
        .ok_or(BenchError::NoDemonstrations)?
        .scaled(1.0 + cfg.grid_inflation);
    Ok(uniform_starts(&bbox, cfg.grid_starts, cfg.seed))
}

/// `count` seeded uniform points in `bbox`.
pub fn uniform_starts(bbox: &BoundingBox, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            bbox.lo
                .iter()
                .zip(&bbox.hi)
                .map(|(l, h)| if h > l { rng.gen_range(*l..*h) } else { *l })
                .collect()
        })
        .collect()
}

/// Samples `sim` at `count` uniform times over `[t0, end]`.
fn resample(sim: &SimTrajectory, end: f64, count: usize) -> Vec<DVector<f64>> {
    let t0 = sim.times[0];
    if count < 2 {
        return vec![sim.states[0].clone()];
    }
    (0..count)
        .map(|k| sim.interpolate(t0 + (end - t0) * k as f64 / (count - 1) as f64))
        .collect()
}

/// Long-horizon runs from the grid starts. For DTW each run is cut at its
/// goal entry (or the horizon) and resampled to the length of the
/// demonstration it is compared with.
pub fn grid_metrics(
    field: &dyn Field,
    demos: &[Demonstration],
    goal: &[f64],
    cfg: &BenchConfig,
) -> Result<GridMetrics, BenchError> {
    let starts = grid_starts(demos, cfg)?;
    let duration = demos.iter().map(|d| d.duration()).fold(0.0, f64::max);
    let horizon = duration * cfg.horizon_multiple;
    let opts = IntegrationOptions {
        record_velocities: false,
        ..IntegrationOptions::for_horizon(horizon).with_dt(duration / cfg.steps_per_duration)
    };
    let goal_v = DVector::from_column_slice(goal);
    let per_start: Vec<(Option<f64>, f64, f64)> = starts
        .par_iter()
        .map(|x0| -> Result<(Option<f64>, f64, f64), BenchError> {
            let sim = integrate_field(field, x0, &opts)?;
            let entry = sim.time_to_reach(goal, cfg.goal_radius);
            let end = entry.unwrap_or(sim.final_time());
            let mut best = f64::INFINITY;
            for demo in demos {
                let path = resample(&sim, end, demo.positions.len());
                best = best.min(dtw(&path, &demo.positions)?);
            }
            Ok((entry, (sim.final_state() - &goal_v).norm(), best))
        })
        .collect::<Result<_, _>>()?;
    let count = starts.len().max(1) as f64;
    let reached: Vec<f64> = per_start.iter().filter_map(|p| p.0).collect();
    Ok(GridMetrics {
        duration: (!reached.is_empty()).then(|| reached.iter().sum::<f64>() / reached.len() as f64),
        fraction_reached: reached.len() as f64 / count,
        distance_to_goal: per_start.iter().map(|p| p.1).sum::<f64>() / count,
        dtw_distance: per_start.iter().map(|p| p.2).sum::<f64>() / count,
        starts,
        horizon,
    })
}

/// Median wall time in seconds of `runs` calls.
pub fn median_wall_time<F: FnMut()>(runs: usize, mut f: F) -> f64 {
    let mut times: Vec<f64> = (0..runs.max(1))
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    if times.len() % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingMetrics {
    /// Median fit wall time, when measured.
    pub training_time: Option<f64>,
    /// Median wall time of one replay over the first demonstration.
    pub integration_speed: f64,
    pub runs: usize,
}

pub fn integration_speed(
    field: &dyn Field,
    demos: &[Demonstration],
    cfg: &BenchConfig,
) -> Result<f64, BenchError> {
    check_demos(demos)?;
    let mut failure = None;
    let t = median_wall_time(cfg.timing_runs, || {
        if let Err(e) = replay(field, &demos[0], 1.0, cfg) {
            failure = Some(e);
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(t),
    }
}

/// Train/test split keeping the first `train` demonstrations for training.
pub fn split_demos(
    demos: &[Demonstration],
    train: usize,
) -> (Vec<Demonstration>, Vec<Demonstration>) {
    let k = train.min(demos.len());
    (demos[..k].to_vec(), demos[k..].to_vec())
}

/// Runs every metric. Goal and grid metrics use the union of training and
/// test demonstrations.
pub fn evaluate(
    field: &dyn Field,
    train: &[Demonstration],
    test: &[Demonstration],
    cfg: &BenchConfig,
    training_time: Option<f64>,
) -> Result<BenchmarkReport, BenchError> {
    cfg.validate()?;
    let all: Vec<Demonstration> = train.iter().chain(test).cloned().collect();
    let goal = cfg.resolve_goal(&all)?;
    let training = reproduction_metrics(field, train, cfg)?;
    let testing = if test.is_empty() {
        None
    } else {
        Some(reproduction_metrics(field, test, cfg)?)
    };
    let goal_m = goal_metrics(field, &all, &goal, cfg)?;
    let grid = grid_metrics(field, &all, &goal, cfg)?;
    let timing = TimingMetrics {
        training_time,
        integration_speed: integration_speed(field, &all, cfg)?,
        runs: cfg.timing_runs,
    };
    Ok(BenchmarkReport {
        config: BenchConfig {
            goal: Some(goal),
            ..cfg.clone()
        },
        training,
        test: testing,
        goal: goal_m,
        grid,
        timing,
    })
}
