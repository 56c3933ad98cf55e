//! HTTP service for interactive sessions.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | create a session |
//! | GET, DELETE | `/sessions/:id` | summary, close |
//! | POST | `/sessions/:id/strokes` | append a demonstration stroke |
//! | POST, GET | `/sessions/:id/fit` | start a fit job (202, or 409 while one runs), job status |
//! | GET | `/sessions/:id/fit/events` | server-sent fit status events until the job ends |
//! | GET | `/sessions/:id/model` | model summary; `?coefficients=true` adds the model JSON |
//! | POST | `/sessions/:id/model/grid` | field values on a regular grid |
//! | PUT | `/sessions/:id/obstacles` | replace the obstacle set |
//! | POST | `/sessions/:id/stream/start`, `/stream/stop` | live integration |
//! | GET | `/sessions/:id/stream` | WebSocket, one JSON message per tick |
//!
//! State-changing calls take an optional `requestId`; repeating a call
//! with the same id returns the first reply without repeating the effect.

pub mod api;
mod session;
mod stream;

use std::collections::HashMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use futures::Stream;
use serde::Deserialize;
use serde_json::Value;
use tokio::sync::broadcast;

use api::{
    CreateSession, ErrorBody, FitRequest, FitState, FitStatus, GridRequest, GridResponse,
    ModelSummary, ObstacleRequest, SessionCreated, StreamStart, StreamStop, StrokeRequest,
};
pub use session::{SessionHandle, MAX_DEGREE};

/// Largest number of grid points per request.
pub const MAX_GRID_POINTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(ErrorBody {
                error: self.message,
            }),
        )
            .into_response()
    }
}

#[derive(Default)]
struct Registry {
    sessions: RwLock<HashMap<String, SessionHandle>>,
    /// Session ids by creation request id.
    created: Mutex<HashMap<String, String>>,
}

#[derive(Clone, Default)]
pub struct AppState {
    inner: Arc<Registry>,
}

impl AppState {
    fn session(&self, id: &str) -> Result<SessionHandle, ApiError> {
        self.inner
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}")))
    }
}

pub fn router() -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/:id", get(summary).delete(close_session))
        .route("/sessions/:id/strokes", post(add_stroke))
        .route("/sessions/:id/fit", post(start_fit).get(fit_status))
        .route("/sessions/:id/fit/events", get(fit_events))
        .route("/sessions/:id/model", get(model_summary))
        .route("/sessions/:id/model/grid", post(model_grid))
        .route("/sessions/:id/obstacles", put(set_obstacles))
        .route("/sessions/:id/stream/start", post(start_stream))
        .route("/sessions/:id/stream/stop", post(stop_stream))
        .route("/sessions/:id/stream", get(stream_socket))
        .with_state(AppState::default())
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

type ApiResult = Result<(StatusCode, Json<Value>), ApiError>;

fn reply(r: Result<(StatusCode, Value), ApiError>) -> ApiResult {
    r.map(|(status, body)| (status, Json(body)))
}

async fn create_session(
    State(state): State<AppState>,
    body: Option<Json<CreateSession>>,
) -> ApiResult {
    let request_id = body.and_then(|Json(b)| b.request_id);
    let mut created = state
        .inner
        .created
        .lock()
        .unwrap_or_else(|e| e.into_inner());
    if let Some(id) = request_id.as_ref().and_then(|r| created.get(r)) {
        let body = serde_json::to_value(SessionCreated {
            session_id: id.clone(),
        })
        .map_err(|e| ApiError::internal(e.to_string()))?;
        return Ok((StatusCode::CREATED, Json(body)));
    }
    let id = uuid::Uuid::new_v4().to_string();
    let handle = SessionHandle::spawn(id.clone());
    state
        .inner
        .sessions
        .write()
        .unwrap_or_else(|e| e.into_inner())
        .insert(id.clone(), handle);
    if let Some(r) = request_id {
        created.insert(r, id.clone());
    }
    log::info!("session {id} created");
    let body = serde_json::to_value(SessionCreated { session_id: id })
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok((StatusCode::CREATED, Json(body)))
}

async fn summary(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<api::SessionSummary>, ApiError> {
    Ok(Json(state.session(&id)?.summary().await?))
}

async fn close_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<StatusCode, ApiError> {
    let removed = state
        .inner
        .sessions
        .write()
        .unwrap_or_else(|e| e.into_inner())
        .remove(&id);
    match removed {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            format!("no session {id}"),
        )),
    }
}

async fn add_stroke(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<StrokeRequest>,
) -> ApiResult {
    reply(state.session(&id)?.add_stroke(req).await)
}

async fn start_fit(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<FitRequest>,
) -> ApiResult {
    reply(state.session(&id)?.start_fit(req).await)
}

async fn fit_status(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<FitStatus>, ApiError> {
    Ok(Json(state.session(&id)?.fit_status().await?))
}

fn status_event(status: &FitStatus) -> Event {
    Event::default()
        .event("status")
        .json_data(status)
        .unwrap_or_else(|e| Event::default().event("error").data(e.to_string()))
}

async fn fit_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let session = state.session(&id)?;
    // subscribe first so that no transition after the status read is missed
    let rx = session.fit_events.subscribe();
    let current = session.fit_status().await?;
    let job = current.job;
    let events = futures::stream::unfold(
        (Some(current), rx, false),
        move |(first, mut rx, finished)| async move {
            if finished {
                return None;
            }
            if let Some(status) = first {
                let done = status.state != FitState::Running;
                return Some((Ok(status_event(&status)), (None, rx, done)));
            }
            loop {
                match rx.recv().await {
                    Ok(ev) if ev.job < job => continue,
                    Ok(ev) => {
                        let done = ev.status.state != FitState::Running;
                        return Some((Ok(status_event(&ev.status)), (None, rx, done)));
                    }
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => return None,
                }
            }
        },
    );
    Ok(Sse::new(events))
}

#[derive(Debug, Default, Deserialize)]
struct ModelQuery {
    #[serde(default)]
    coefficients: bool,
}

async fn model_summary(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ModelQuery>,
) -> Result<Json<ModelSummary>, ApiError> {
    let entry = state.session(&id)?.model().ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "no model has been fitted in this session",
        )
    })?;
    let model = &entry.model;
    let json = if q.coefficients {
        Some(serde_json::to_value(model.as_ref()).map_err(|e| ApiError::internal(e.to_string()))?)
    } else {
        None
    };
    Ok(Json(ModelSummary {
        model_version: entry.version,
        dimension: model.dim(),
        degree: model.degree(),
        tau: model.spec().map(|s| s.tau),
        loss: model.loss(),
        model: json,
    }))
}

/// Regular grid with `resolution` points per axis, first axis fastest.
pub fn grid_points(lo: &[f64], hi: &[f64], resolution: usize) -> Vec<Vec<f64>> {
    let n = lo.len();
    let total = resolution.pow(n as u32);
    (0..total)
        .map(|mut k| {
            (0..n)
                .map(|i| {
                    let j = k % resolution;
                    k /= resolution;
                    lo[i] + (hi[i] - lo[i]) * j as f64 / (resolution - 1) as f64
                })
                .collect()
        })
        .collect()
}

async fn model_grid(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<GridRequest>,
) -> Result<Json<GridResponse>, ApiError> {
    let entry = state.session(&id)?.model().ok_or_else(|| {
        ApiError::new(
            StatusCode::CONFLICT,
            "no model has been fitted in this session",
        )
    })?;
    let n = entry.model.dim();
    let bad = |m: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, m);
    if req.lo.len() != n || req.hi.len() != n {
        return Err(bad(format!("lo and hi must have {n} coordinates")));
    }
    if req
        .lo
        .iter()
        .zip(&req.hi)
        .any(|(l, h)| !(l < h && l.is_finite() && h.is_finite()))
    {
        return Err(bad("need finite lo < hi on every axis".into()));
    }
    let total = (req.resolution as f64).powi(n as i32);
    if req.resolution < 2 || total > MAX_GRID_POINTS as f64 {
        return Err(bad(format!(
            "resolution must be at least 2 with at most {MAX_GRID_POINTS} points in total"
        )));
    }
    let points = grid_points(&req.lo, &req.hi, req.resolution);
    let values = points
        .iter()
        .map(|p| entry.model.eval(p).iter().copied().collect())
        .collect();
    Ok(Json(GridResponse {
        model_version: entry.version,
        points,
        values,
    }))
}

async fn set_obstacles(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<ObstacleRequest>,
) -> ApiResult {
    reply(state.session(&id)?.set_obstacles(req).await)
}

async fn start_stream(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Option<Json<StreamStart>>,
) -> ApiResult {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    reply(state.session(&id)?.start_stream(req).await)
}

async fn stop_stream(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Option<Json<StreamStop>>,
) -> ApiResult {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    reply(state.session(&id)?.stop_stream(req).await)
}

async fn stream_socket(
    ws: WebSocketUpgrade,
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let rx = state.session(&id)?.states.subscribe();
    Ok(ws.on_upgrade(move |socket| forward_states(socket, rx)))
}

async fn forward_states(mut socket: WebSocket, mut rx: broadcast::Receiver<api::StreamMessage>) {
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(m) => {
                    let Ok(text) = serde_json::to_string(&m) else { continue };
                    if socket.send(Message::Text(text)).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => log::debug!("stream consumer skipped {n} messages"),
                Err(broadcast::error::RecvError::Closed) => break,
            },
            incoming = socket.recv() => match incoming {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_covers_corners_in_order() {
        let g = grid_points(&[0.0, -1.0], &[1.0, 1.0], 3);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], vec![0.0, -1.0]);
        assert_eq!(g[1], vec![0.5, -1.0]);
        assert_eq!(g[3], vec![0.0, 0.0]);
        assert_eq!(g[8], vec![1.0, 1.0]);
    }
}
