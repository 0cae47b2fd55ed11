//! Live assignment service: the experiment engine behind four JSON
//! endpoints, with every event appended to a replayable JSONL log before
//! the response goes out.
//!
//! - `POST /assign {unit_id, covariates}` → `{arm, probabilities, batch}`
//! - `POST /outcome {unit_id, counts, channel_detail}` → state summary
//! - `POST /advance-batch {force}` → state summary
//! - `GET /state` → `{batch, n_assigned, n_completed}`
//!
//! One mutex serializes all engine access, so each unit's probabilities
//! come from exactly one frozen batch and the log order is the service's
//! serialization order.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use adex_core::experiment::{write_event_log, Experiment, ExperimentError};
use adex_core::model::{ChannelGrid, CovariateContext, OutcomeRecord, Posttest};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ServeConfig;
use crate::error::CliError;

// ---------------------------------------------------------------------------
// Shared state
// ---------------------------------------------------------------------------

pub struct ServeState {
    pub experiment: Experiment,
    log_file: Option<File>,
    n_logged: usize,
}

impl ServeState {
    pub fn new(experiment: Experiment, log_file: Option<File>) -> Self {
        ServeState { experiment, log_file, n_logged: 0 }
    }

    /// Append any events not yet on disk. Called after every mutating
    /// endpoint, before its response is sent.
    fn sync_log(&mut self) -> Result<(), ApiError> {
        let Some(file) = &mut self.log_file else { return Ok(()) };
        let events = self.experiment.events();
        if events.len() > self.n_logged {
            write_event_log(&mut *file, &events[self.n_logged..])
                .map_err(|e| ApiError::internal(format!("event log append: {e}")))?;
            file.flush().map_err(|e| ApiError::internal(format!("event log flush: {e}")))?;
            self.n_logged = events.len();
        }
        Ok(())
    }

    fn summary(&self) -> StateResponse {
        StateResponse {
            batch: self.experiment.batch(),
            n_assigned: self.experiment.n_assigned(),
            n_completed: self.experiment.n_completed(),
        }
    }
}

pub type Shared = Arc<Mutex<ServeState>>;

fn lock(shared: &Shared) -> std::sync::MutexGuard<'_, ServeState> {
    shared.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

// ---------------------------------------------------------------------------
// Wire types
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
pub struct AssignBody {
    pub unit_id: String,
    pub covariates: CovariateContext,
}

#[derive(Debug, Serialize)]
pub struct AssignResponse {
    pub arm: usize,
    pub probabilities: Vec<f64>,
    pub batch: usize,
}

#[derive(Debug, Deserialize)]
pub struct CountsBody {
    pub m_pre: u8,
    pub t_pre: u8,
    #[serde(default)]
    pub m_post: Option<u8>,
    #[serde(default)]
    pub t_post: Option<u8>,
}

#[derive(Debug, Default, Deserialize)]
pub struct ChannelDetailBody {
    #[serde(default)]
    pub pre: Option<ChannelGrid>,
    #[serde(default)]
    pub post: Option<ChannelGrid>,
}

#[derive(Debug, Deserialize)]
pub struct OutcomeBody {
    pub unit_id: String,
    pub counts: CountsBody,
    #[serde(default)]
    pub channel_detail: Option<ChannelDetailBody>,
}

#[derive(Debug, Deserialize)]
pub struct AdvanceBody {
    #[serde(default)]
    pub force: bool,
}

#[derive(Debug, Serialize)]
pub struct StateResponse {
    pub batch: usize,
    pub n_assigned: usize,
    pub n_completed: usize,
}

impl OutcomeBody {
    fn into_record(self) -> Result<(String, OutcomeRecord), ApiError> {
        let detail = self.channel_detail.unwrap_or_default();
        let posttest = match (self.counts.m_post, self.counts.t_post) {
            (Some(m_post), Some(t_post)) => {
                Some(Posttest { m_post, t_post, channel: detail.post })
            }
            (None, None) => {
                if detail.post.is_some() {
                    return Err(ApiError::bad_request(
                        "channel_detail.post given without m_post/t_post counts".into(),
                    ));
                }
                None
            }
            _ => {
                return Err(ApiError::bad_request(
                    "m_post and t_post must be provided together".into(),
                ))
            }
        };
        let record = OutcomeRecord {
            m_pre: self.counts.m_pre,
            t_pre: self.counts.t_pre,
            channel_pre: detail.pre,
            posttest,
        };
        Ok((self.unit_id, record))
    }
}

// ---------------------------------------------------------------------------
// Error mapping
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: String) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, kind: "data", message }
    }

    fn internal(message: String) -> Self {
        ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, kind: "internal", message }
    }
}

impl From<ExperimentError> for ApiError {
    fn from(e: ExperimentError) -> Self {
        let status = match e {
            ExperimentError::UnknownUnit(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError { status, kind: "data", message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(json!({ "error": self.kind, "message": self.message }));
        (self.status, body).into_response()
    }
}

// ---------------------------------------------------------------------------
// Handlers
// ---------------------------------------------------------------------------

async fn assign(
    State(shared): State<Shared>,
    Json(body): Json<AssignBody>,
) -> Result<Json<AssignResponse>, ApiError> {
    let mut state = lock(&shared);
    let event = state.experiment.assign(&body.unit_id, body.covariates)?;
    state.sync_log()?;
    Ok(Json(AssignResponse {
        arm: event.arm,
        probabilities: event.probabilities,
        batch: event.batch_index,
    }))
}

async fn outcome(
    State(shared): State<Shared>,
    Json(body): Json<OutcomeBody>,
) -> Result<Json<StateResponse>, ApiError> {
    let (unit_id, record) = body.into_record()?;
    let mut state = lock(&shared);
    state.experiment.record_outcome(&unit_id, record)?;
    state.sync_log()?;
    Ok(Json(state.summary()))
}

async fn advance_batch(
    State(shared): State<Shared>,
    Json(body): Json<AdvanceBody>,
) -> Result<Json<StateResponse>, ApiError> {
    let mut state = lock(&shared);
    state.experiment.advance_batch(body.force)?;
    state.sync_log()?;
    Ok(Json(state.summary()))
}

async fn get_state(State(shared): State<Shared>) -> Json<StateResponse> {
    let state = lock(&shared);
    Json(state.summary())
}

pub fn build_router(shared: Shared) -> Router {
    Router::new()
        .route("/assign", post(assign))
        .route("/outcome", post(outcome))
        .route("/advance-batch", post(advance_batch))
        .route("/state", get(get_state))
        .with_state(shared)
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Run the service until the process is stopped. Prints a one-line JSON
/// startup message with the bound address (so callers binding port 0 learn
/// the real port) and appends every event to `<out>/events.jsonl`.
pub fn run_serve(
    config: ServeConfig,
    seed_flag: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let mut experiment_config = config.experiment.clone();
    if let Some(seed) = seed_flag {
        experiment_config.seed = seed;
    }
    let experiment = Experiment::new(experiment_config)?;

    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", out.display())))?;
    let log_path = out.join("events.jsonl");
    let log_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| CliError::Internal(format!("cannot open {}: {e}", log_path.display())))?;

    let shared: Shared = Arc::new(Mutex::new(ServeState::new(experiment, Some(log_file))));
    let router = build_router(shared);

    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| CliError::Internal(format!("tokio runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&config.addr)
            .await
            .map_err(|e| CliError::Data(format!("cannot bind {}: {e}", config.addr)))?;
        let addr = listener
            .local_addr()
            .map_err(|e| CliError::Internal(format!("local_addr: {e}")))?;
        println!(
            "{}",
            json!({ "listening": addr.to_string(), "events": log_path })
        );
        use std::io::Write as _;
        std::io::stdout().flush().ok();
        log::info!("serving on {addr}");
        axum::serve(listener, router)
            .await
            .map_err(|e| CliError::Internal(format!("server: {e}")))
    })
}
