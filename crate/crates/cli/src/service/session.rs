//! One actor task per session owns all of its mutable state. Transport
//! handlers talk to it through [`SessionHandle`]; fits run on the blocking
//! pool and report back as messages.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use axum::http::StatusCode;
use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};
use tokio::sync::{broadcast, mpsc, oneshot, watch};

use cvf_core::dynsys::{
    default_alpha, integrate_field, IntegrationOptions, ObstacleChannel, ObstacleField,
    DEFAULT_DECAY, DEFAULT_EXCLUSION_RADIUS,
};
use cvf_core::learner::{
    self, ContractionSpec, Demonstration, FitOptions, FitStage, LearnError, VectorFieldModel,
};

use super::api::{
    FitEvent, FitRequest, FitState, FitStatus, ObstacleAck, ObstacleRequest, SessionSummary,
    StreamMessage, StreamStart, StreamStop, StrokeRequest,
};
use super::stream::{self, ModelEntry, ModelWatch, StreamHandle, StreamParams};
use super::ApiError;

/// Highest field degree the service accepts.
pub const MAX_DEGREE: usize = 8;

type Reply = Result<(StatusCode, Value), ApiError>;

enum Command {
    Summary(oneshot::Sender<SessionSummary>),
    Stroke(StrokeRequest, oneshot::Sender<Reply>),
    Fit(FitRequest, oneshot::Sender<Reply>),
    FitStatus(oneshot::Sender<FitStatus>),
    FitProgress {
        job: u64,
        stage: FitStage,
    },
    FitDone {
        job: u64,
        result: Box<Result<VectorFieldModel, LearnError>>,
    },
    Obstacles(ObstacleRequest, oneshot::Sender<Reply>),
    StreamStart(StreamStart, oneshot::Sender<Reply>),
    StreamStop(StreamStop, oneshot::Sender<Reply>),
}

#[derive(Clone)]
pub struct SessionHandle {
    tx: mpsc::Sender<Command>,
    pub fit_events: broadcast::Sender<FitEvent>,
    pub states: broadcast::Sender<StreamMessage>,
    pub models: ModelWatch,
}

fn gone() -> ApiError {
    ApiError::new(StatusCode::GONE, "session closed")
}

impl SessionHandle {
    pub fn spawn(id: String) -> Self {
        let (tx, rx) = mpsc::channel(64);
        let (fit_events, _) = broadcast::channel(64);
        let (states, _) = broadcast::channel(1024);
        let (model_tx, models) = watch::channel(None);
        let session = Session {
            id,
            demos: Vec::new(),
            job: 0,
            fit: FitStatus {
                job: 0,
                state: FitState::Idle,
                stage: None,
                error: None,
                largest_feasible_tau: None,
                model_version: 0,
            },
            model_tx,
            obstacles: Arc::new(ObstacleChannel::default()),
            stream: None,
            replies: HashMap::new(),
            fit_events: fit_events.clone(),
            states: states.clone(),
            self_tx: tx.downgrade(),
        };
        tokio::spawn(session.run(rx));
        Self {
            tx,
            fit_events,
            states,
            models,
        }
    }

    async fn ask<T>(
        &self,
        make: impl FnOnce(oneshot::Sender<T>) -> Command,
    ) -> Result<T, ApiError> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(make(reply)).await.map_err(|_| gone())?;
        rx.await.map_err(|_| gone())
    }

    pub async fn summary(&self) -> Result<SessionSummary, ApiError> {
        self.ask(Command::Summary).await
    }

    pub async fn fit_status(&self) -> Result<FitStatus, ApiError> {
        self.ask(Command::FitStatus).await
    }

    pub async fn add_stroke(&self, req: StrokeRequest) -> Reply {
        self.ask(|r| Command::Stroke(req, r)).await?
    }

    pub async fn start_fit(&self, req: FitRequest) -> Reply {
        self.ask(|r| Command::Fit(req, r)).await?
    }

    pub async fn set_obstacles(&self, req: ObstacleRequest) -> Reply {
        self.ask(|r| Command::Obstacles(req, r)).await?
    }

    pub async fn start_stream(&self, req: StreamStart) -> Reply {
        self.ask(|r| Command::StreamStart(req, r)).await?
    }

    pub async fn stop_stream(&self, req: StreamStop) -> Reply {
        self.ask(|r| Command::StreamStop(req, r)).await?
    }

    pub fn model(&self) -> Option<Arc<ModelEntry>> {
        self.models.borrow().clone()
    }
}

struct Session {
    id: String,
    demos: Vec<Demonstration>,
    job: u64,
    fit: FitStatus,
    model_tx: watch::Sender<Option<Arc<ModelEntry>>>,
    obstacles: Arc<ObstacleChannel>,
    stream: Option<StreamHandle>,
    /// Successful replies by request id, so retried calls do not repeat
    /// their effect.
    replies: HashMap<String, (StatusCode, Value)>,
    fit_events: broadcast::Sender<FitEvent>,
    states: broadcast::Sender<StreamMessage>,
    self_tx: mpsc::WeakSender<Command>,
}

fn unprocessable(message: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, message)
}

fn conflict(message: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::CONFLICT, message)
}

fn ok<T: Serialize>(status: StatusCode, body: &T) -> Reply {
    Ok((
        status,
        serde_json::to_value(body).map_err(|e| ApiError::internal(e.to_string()))?,
    ))
}

impl Session {
    async fn run(mut self, mut rx: mpsc::Receiver<Command>) {
        while let Some(cmd) = rx.recv().await {
            match cmd {
                Command::Summary(reply) => {
                    let _ = reply.send(self.summary());
                }
                Command::FitStatus(reply) => {
                    let _ = reply.send(self.fit.clone());
                }
                Command::Stroke(req, reply) => {
                    let key = req.request_id.clone().map(|id| format!("stroke:{id}"));
                    let _ = reply.send(self.idempotent(key, |s| s.add_stroke(req)));
                }
                Command::Fit(req, reply) => {
                    let key = req.request_id.clone().map(|id| format!("fit:{id}"));
                    let _ = reply.send(self.idempotent(key, |s| s.start_fit(req)));
                }
                Command::FitProgress { job, stage } => {
                    if job == self.job && self.fit.state == FitState::Running {
                        self.fit.stage = Some(stage);
                        self.publish_fit();
                    }
                }
                Command::FitDone { job, result } => self.finish_fit(job, *result),
                Command::Obstacles(req, reply) => {
                    let key = req.request_id.clone().map(|id| format!("obstacles:{id}"));
                    let _ = reply.send(self.idempotent(key, |s| s.set_obstacles(req)));
                }
                Command::StreamStart(req, reply) => {
                    let key = req
                        .request_id
                        .clone()
                        .map(|id| format!("stream-start:{id}"));
                    let _ = reply.send(self.idempotent(key, |s| s.start_stream(req)));
                }
                Command::StreamStop(req, reply) => {
                    let key = req.request_id.clone().map(|id| format!("stream-stop:{id}"));
                    let _ = reply.send(self.idempotent(key, |s| {
                        s.stream = None;
                        ok(StatusCode::OK, &json!({ "streaming": false }))
                    }));
                }
            }
        }
        log::debug!("session {} closed", self.id);
    }

    fn idempotent(&mut self, key: Option<String>, op: impl FnOnce(&mut Self) -> Reply) -> Reply {
        if let Some(cached) = key.as_ref().and_then(|k| self.replies.get(k)) {
            return Ok(cached.clone());
        }
        let reply = op(self)?;
        if let Some(k) = key {
            self.replies.insert(k, reply.clone());
        }
        Ok(reply)
    }

    fn summary(&self) -> SessionSummary {
        SessionSummary {
            session_id: self.id.clone(),
            demonstrations: self.demos.len(),
            dimension: self.dimension(),
            fit: self.fit.clone(),
            obstacle_version: self.obstacles.version(),
            streaming: self.stream.as_ref().is_some_and(|s| !s.is_finished()),
        }
    }

    fn dimension(&self) -> Option<usize> {
        self.demos.first().map(|d| d.dim())
    }

    fn model(&self) -> Option<Arc<ModelEntry>> {
        self.model_tx.borrow().clone()
    }

    fn longest_duration(&self) -> f64 {
        self.demos.iter().map(|d| d.duration()).fold(0.0, f64::max)
    }

    fn add_stroke(&mut self, req: StrokeRequest) -> Reply {
        let points = req.points;
        if points.len() < 2 {
            return Err(unprocessable("a stroke needs at least two points"));
        }
        let n = points[0].x.len();
        if n == 0 {
            return Err(unprocessable("stroke points have no coordinates"));
        }
        if let Some(expected) = self.dimension() {
            if n != expected {
                return Err(unprocessable(format!(
                    "stroke dimension {n} differs from the session's {expected}"
                )));
            }
        }
        for (k, p) in points.iter().enumerate() {
            if p.x.len() != n {
                return Err(unprocessable(format!(
                    "point {k} has {} coordinates, expected {n}",
                    p.x.len()
                )));
            }
            if !p.t.is_finite() || p.x.iter().any(|v| !v.is_finite()) {
                return Err(unprocessable(format!("point {k} is not finite")));
            }
            if k > 0 && p.t <= points[k - 1].t {
                return Err(unprocessable(format!(
                    "timestamps must increase (point {k})"
                )));
            }
        }
        let index = self.demos.len();
        let times = points.iter().map(|p| p.t).collect();
        let positions = points
            .iter()
            .map(|p| DVector::from_column_slice(&p.x))
            .collect();
        self.demos.push(Demonstration::new(
            format!("stroke-{}", index + 1),
            times,
            positions,
        ));
        ok(
            StatusCode::CREATED,
            &json!({ "demoIndex": index, "demonstrations": self.demos.len() }),
        )
    }

    fn start_fit(&mut self, req: FitRequest) -> Reply {
        if self.fit.state == FitState::Running {
            return Err(conflict(format!(
                "fit job {} is already running",
                self.fit.job
            )));
        }
        if self.demos.is_empty() {
            return Err(unprocessable("add a stroke before fitting"));
        }
        if req.degree == 0 || req.degree > MAX_DEGREE {
            return Err(unprocessable(format!("degree must be in 1..={MAX_DEGREE}")));
        }
        let n = self.dimension().unwrap_or(0);
        let spec =
            ContractionSpec::identity(n, req.tau).map_err(|e| unprocessable(e.to_string()))?;
        let mut options = FitOptions::with_degree(req.degree);
        options.trajectory_degree = req.trajectory_degree;
        if let Some(a) = req.accuracy {
            options.solver.accuracy = a;
        }
        if let Some(m) = req.max_iterations {
            options.solver.max_iterations = m;
        }
        options
            .validate()
            .map_err(|e| unprocessable(e.to_string()))?;

        self.job += 1;
        let job = self.job;
        self.fit = FitStatus {
            job,
            state: FitState::Running,
            stage: None,
            error: None,
            largest_feasible_tau: None,
            model_version: self.fit.model_version,
        };
        self.publish_fit();
        let demos = self.demos.clone();
        let tx = self.self_tx.clone();
        log::info!(
            "session {}: fit job {job} (degree {}, tau {})",
            self.id,
            req.degree,
            req.tau
        );
        tokio::spawn(async move {
            let progress_tx = tx.clone();
            let result = tokio::task::spawn_blocking(move || {
                let progress = |stage| {
                    if let Some(tx) = progress_tx.upgrade() {
                        let _ = tx.blocking_send(Command::FitProgress { job, stage });
                    }
                };
                learner::fit_with_progress(&demos, &spec, &options, &progress)
            })
            .await
            .unwrap_or_else(|e| Err(LearnError::InvalidConfig(format!("fit task failed: {e}"))));
            if let Some(tx) = tx.upgrade() {
                let result = Box::new(result);
                let _ = tx.send(Command::FitDone { job, result }).await;
            }
        });
        ok(StatusCode::ACCEPTED, &self.fit)
    }

    fn finish_fit(&mut self, job: u64, result: Result<VectorFieldModel, LearnError>) {
        if job != self.job {
            return;
        }
        match result {
            Ok(model) => {
                let version = self.fit.model_version + 1;
                self.model_tx.send_replace(Some(Arc::new(ModelEntry {
                    version,
                    model: Arc::new(model),
                })));
                self.fit.state = FitState::Succeeded;
                self.fit.model_version = version;
                log::info!(
                    "session {}: fit job {job} succeeded, model version {version}",
                    self.id
                );
            }
            Err(e) => {
                self.fit.state = FitState::Failed;
                if let LearnError::Infeasible {
                    largest_feasible_tau,
                    ..
                } = &e
                {
                    self.fit.largest_feasible_tau = *largest_feasible_tau;
                }
                self.fit.error = Some(e.to_string());
                log::warn!("session {}: fit job {job} failed: {e}", self.id);
            }
        }
        self.publish_fit();
    }

    fn publish_fit(&self) {
        let _ = self.fit_events.send(FitEvent {
            job: self.fit.job,
            status: self.fit.clone(),
        });
    }

    fn set_obstacles(&mut self, req: ObstacleRequest) -> Reply {
        let model = self.model();
        let n = model
            .as_ref()
            .map(|m| m.model.dim())
            .or(self.dimension())
            .ok_or_else(|| unprocessable("the session has no dimension yet; add a stroke first"))?;
        if let Some(p) = req
            .points
            .iter()
            .find(|p| p.len() != n || p.iter().any(|v| !v.is_finite()))
        {
            return Err(unprocessable(format!(
                "obstacle {p:?} must be {n} finite coordinates"
            )));
        }
        let decay = req.decay.unwrap_or(DEFAULT_DECAY);
        let scale = model
            .as_ref()
            .map(|m| m.model.normalization().scale)
            .unwrap_or(1.0);
        let rho = req
            .exclusion_radius
            .unwrap_or(DEFAULT_EXCLUSION_RADIUS * scale);
        let field = ObstacleField::stationary(req.points, decay, req.alpha.unwrap_or(0.0), rho)
            .map_err(|e| unprocessable(e.to_string()))?;
        let alpha = match req.alpha {
            Some(a) => a,
            None => {
                let entry = model
                    .ok_or_else(|| unprocessable("alpha is required before a model is fitted"))?;
                let demo = &self.demos[0];
                let nominal = integrate_field(
                    entry.model.as_ref(),
                    demo.start().as_slice(),
                    &IntegrationOptions::for_horizon(demo.duration()),
                )
                .map_err(|e| ApiError::internal(e.to_string()))?;
                default_alpha(entry.model.as_ref(), &field, &nominal).unwrap_or(0.0)
            }
        };
        let field = field
            .with_strength(alpha)
            .map_err(|e| unprocessable(e.to_string()))?;
        let version = self.obstacles.publish(field);
        let stream_tick = self.stream.as_ref().map(|s| s.current_tick());
        ok(
            StatusCode::OK,
            &ObstacleAck {
                obstacle_version: version,
                alpha,
                stream_tick,
            },
        )
    }

    fn start_stream(&mut self, req: StreamStart) -> Reply {
        let entry = self
            .model()
            .ok_or_else(|| conflict("no model has been fitted in this session"))?;
        let start = match req.start {
            Some(s) => s,
            None => self
                .demos
                .first()
                .map(|d| d.start().iter().copied().collect())
                .ok_or_else(|| unprocessable("no start given and no stroke to start from"))?,
        };
        if start.len() != entry.model.dim() || start.iter().any(|v| !v.is_finite()) {
            return Err(unprocessable(format!(
                "start must be {} finite coordinates",
                entry.model.dim()
            )));
        }
        let longest = self.longest_duration().max(f64::MIN_POSITIVE);
        let dt = req.dt.unwrap_or(longest / 1000.0);
        let horizon = req.horizon.unwrap_or(30.0 * longest);
        if !(dt > 0.0 && dt.is_finite() && horizon >= dt && horizon.is_finite()) {
            return Err(unprocessable(
                "dt and horizon must be positive with horizon >= dt",
            ));
        }
        if req.steps_per_tick == 0 || req.cadence_ms == 0 {
            return Err(unprocessable("stepsPerTick and cadenceMs must be positive"));
        }
        let params = StreamParams {
            start,
            dt,
            steps_per_tick: req.steps_per_tick,
            cadence: Duration::from_millis(req.cadence_ms),
            horizon,
        };
        self.stream = Some(stream::spawn(
            params,
            self.model_tx.subscribe(),
            self.obstacles.clone(),
            self.states.clone(),
        ));
        ok(
            StatusCode::OK,
            &json!({ "streaming": true, "dt": dt, "horizon": horizon, "modelVersion": entry.version }),
        )
    }
}
