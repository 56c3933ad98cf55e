//! JSON bodies of the HTTP and stream API. Field names are camelCase.

use serde::{Deserialize, Serialize};

use cvf_core::learner::FitStage;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CreateSession {
    pub request_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionCreated {
    pub session_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrokePoint {
    /// Seconds.
    pub t: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StrokeRequest {
    pub request_id: Option<String>,
    pub points: Vec<StrokePoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct FitRequest {
    pub request_id: Option<String>,
    pub degree: usize,
    pub tau: f64,
    pub accuracy: Option<f64>,
    pub max_iterations: Option<usize>,
    pub trajectory_degree: Option<usize>,
}

impl Default for FitRequest {
    fn default() -> Self {
        Self {
            request_id: None,
            degree: 3,
            tau: 1.0,
            accuracy: None,
            max_iterations: None,
            trajectory_degree: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitState {
    Idle,
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FitStatus {
    pub job: u64,
    pub state: FitState,
    pub stage: Option<FitStage>,
    pub error: Option<String>,
    /// Suggested rate after an infeasible fit.
    pub largest_feasible_tau: Option<f64>,
    pub model_version: u64,
}

/// Pushed on the fit event stream; the stream ends after a terminal state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FitEvent {
    pub job: u64,
    pub status: FitStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionSummary {
    pub session_id: String,
    pub demonstrations: usize,
    pub dimension: Option<usize>,
    pub fit: FitStatus,
    pub obstacle_version: u64,
    pub streaming: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelSummary {
    pub model_version: u64,
    pub dimension: usize,
    pub degree: usize,
    pub tau: Option<f64>,
    pub loss: f64,
    /// Full model JSON, only when requested.
    pub model: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GridRequest {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Points per axis.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn default_resolution() -> usize {
    25
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GridResponse {
    pub model_version: u64,
    pub points: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ObstacleRequest {
    pub request_id: Option<String>,
    pub points: Vec<Vec<f64>>,
    /// `None` picks the default strength along the current model's replay
    /// of the first demonstration.
    pub alpha: Option<f64>,
    pub decay: Option<u32>,
    pub exclusion_radius: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ObstacleAck {
    pub obstacle_version: u64,
    pub alpha: f64,
    /// Stream tick in progress when the update was published; every tick
    /// after it uses this version or a later one.
    pub stream_tick: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct StreamStart {
    pub request_id: Option<String>,
    /// Defaults to the first demonstration's start.
    pub start: Option<Vec<f64>>,
    /// Integration step; defaults to the longest demonstration / 1000.
    pub dt: Option<f64>,
    pub steps_per_tick: usize,
    pub cadence_ms: u64,
    /// Defaults to 30 times the longest demonstration.
    pub horizon: Option<f64>,
}

impl Default for StreamStart {
    fn default() -> Self {
        Self {
            request_id: None,
            start: None,
            dt: None,
            steps_per_tick: 1,
            cadence_ms: 20,
            horizon: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StreamStop {
    pub request_id: Option<String>,
}

/// One message per stream tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StreamMessage {
    pub tick: u64,
    pub t: f64,
    pub x: Vec<f64>,
    pub modulated: bool,
    pub obstacle_version: u64,
    pub model_version: u64,
    /// Set on the last message of a run.
    pub done: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
