use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use nalgebra::DVector;
use tokio::sync::{broadcast, watch};
use tokio::task::JoinHandle;

use cvf_core::dynsys::{modulate, rk4_step, Dynamics, Field, ObstacleChannel};
use cvf_core::learner::VectorFieldModel;

use super::api::StreamMessage;

/// An immutable fitted model with its session-local version.
#[derive(Debug)]
pub struct ModelEntry {
    pub version: u64,
    pub model: Arc<VectorFieldModel>,
}

pub type ModelWatch = watch::Receiver<Option<Arc<ModelEntry>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct StreamParams {
    pub start: Vec<f64>,
    pub dt: f64,
    pub steps_per_tick: usize,
    pub cadence: Duration,
    pub horizon: f64,
}

/// A running live integration; dropping the handle stops it.
#[derive(Debug)]
pub struct StreamHandle {
    task: JoinHandle<()>,
    tick: Arc<AtomicU64>,
}

impl StreamHandle {
    /// Index of the tick being computed (or about to be).
    pub fn current_tick(&self) -> u64 {
        self.tick.load(Ordering::SeqCst)
    }

    pub fn is_finished(&self) -> bool {
        self.task.is_finished()
    }
}

impl Drop for StreamHandle {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Starts a live integration. Tick 0 reports the start state; every later
/// tick advances `steps_per_tick` RK4 steps under the model and obstacle
/// snapshots read at the beginning of that tick. A fit finishing mid-run
/// swaps in the new model at the next tick.
pub fn spawn(
    params: StreamParams,
    models: ModelWatch,
    obstacles: Arc<ObstacleChannel>,
    out: broadcast::Sender<StreamMessage>,
) -> StreamHandle {
    let tick = Arc::new(AtomicU64::new(0));
    let counter = tick.clone();
    let task = tokio::spawn(async move {
        let mut interval = tokio::time::interval(params.cadence);
        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        let mut x = DVector::from_column_slice(&params.start);
        let mut steps = 0usize;
        loop {
            interval.tick().await;
            let k = counter.load(Ordering::SeqCst);
            let Some(entry) = models.borrow().clone() else {
                continue;
            };
            let snapshot = obstacles.snapshot();
            let base: Arc<dyn Field> = entry.model.clone();
            let field = modulate(base, snapshot.field.clone());
            let mut finite = true;
            if k > 0 {
                for _ in 0..params.steps_per_tick {
                    let t = steps as f64 * params.dt;
                    let k1 = field.velocity(t, x.as_slice());
                    let next = rk4_step(&field, t, &x, &k1, params.dt);
                    if !next.iter().all(|v| v.is_finite()) {
                        finite = false;
                        break;
                    }
                    x = next;
                    steps += 1;
                }
            }
            let t = steps as f64 * params.dt;
            let done = !finite || t >= params.horizon * (1.0 - 1e-12);
            let msg = StreamMessage {
                tick: k,
                t,
                x: x.iter().copied().collect(),
                modulated: field.is_modulating(t),
                obstacle_version: snapshot.version,
                model_version: entry.version,
                done,
            };
            // no subscribers is fine: the run continues for late joiners
            let _ = out.send(msg);
            counter.store(k + 1, Ordering::SeqCst);
            if done {
                break;
            }
        }
    });
    StreamHandle { task, tick }
}
