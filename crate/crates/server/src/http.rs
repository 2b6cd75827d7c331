//! HTTP routes. Every failure answers with an [`ApiError`] body.

use crate::ws;
use crate::AppState;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use biteleop_core::api::{
    fk_fixtures, ApiError, FkFixtures, GenTraceRequest, GenTraceResponse, MetricsRequest, MetricsResponse,
    RecordRefRequest, RecordRefResponse, ReferenceLibraryMsg, ReplayRequest, ReplayResponse, Status,
};
use biteleop_core::input::{read_trace, write_trace, Side};
use biteleop_core::kinematics::write_chain;
use biteleop_core::protocol::StateMessage;
use biteleop_core::session::metrics::series_csv;
use biteleop_core::session::scenario::{generate, Scenario, ScenarioSpec};
use biteleop_core::session::{compute_metrics, metrics_csv, replay, SessionConfig, SessionLog};
use serde::Deserialize;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use tower_http::cors::CorsLayer;

/// Largest fixture set served in one request.
const MAX_FIXTURES: usize = 10_000;
/// Traces and logs travel as request bodies; an hour at 250 Hz is about
/// 200 MB of log text.
const MAX_BODY: usize = 256 << 20;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/ws", get(ws::upgrade))
        .route("/v1/chain/{side}", get(chain))
        .route("/v1/fk-fixtures", get(fixtures))
        .route("/v1/state", get(state_now))
        .route("/v1/status", get(status))
        .route("/v1/reference-library", get(library))
        .route("/v1/reference-library/record", post(record))
        .route("/v1/replay", post(replay_trace))
        .route("/v1/metrics", post(metrics))
        .route("/v1/gen-trace", post(gen_trace))
        .layer(DefaultBodyLimit::max(MAX_BODY))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

#[derive(Debug)]
pub struct Failure(StatusCode, ApiError);

impl Failure {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        Self(
            status,
            ApiError {
                kind: kind.into(),
                message: message.into(),
            },
        )
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "usage", message)
    }

    fn invalid(kind: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, kind, message)
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type Reply<T> = Result<Json<T>, Failure>;

fn parse_side(s: &str) -> Result<Side, Failure> {
    s.parse::<Side>().map_err(Failure::usage)
}

async fn chain(State(app): State<Arc<AppState>>, Path(side): Path<String>) -> Result<Response, Failure> {
    let side = parse_side(&side)?;
    let text = write_chain(&app.config.chains[side.index()]);
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}

#[derive(Debug, Deserialize)]
struct FixtureQuery {
    side: Option<String>,
    count: Option<usize>,
    seed: Option<u64>,
}

async fn fixtures(State(app): State<Arc<AppState>>, Query(q): Query<FixtureQuery>) -> Reply<FkFixtures> {
    let side = parse_side(q.side.as_deref().unwrap_or("left"))?;
    let count = q.count.unwrap_or(100);
    if count > MAX_FIXTURES {
        return Err(Failure::usage(format!("count must be at most {MAX_FIXTURES}")));
    }
    let chain = &app.config.chains[side.index()];
    Ok(Json(fk_fixtures(chain, side, count, q.seed.unwrap_or(0))))
}

async fn state_now(State(app): State<Arc<AppState>>) -> Reply<StateMessage> {
    let snap = app.snapshots.borrow().clone();
    match snap.state {
        Some(s) => Ok(Json((*s).clone())),
        None => Err(Failure::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "conflict",
            "no state published yet",
        )),
    }
}

async fn status(State(app): State<Arc<AppState>>) -> Json<Status> {
    Json(Status {
        tick: app.tick.load(Ordering::Relaxed),
        tick_rate: app.config.tick_rate,
        decimation: app.config.gateway.decimation,
        clients: app.clients.load(Ordering::SeqCst),
        operator_connected: app.operator_taken.load(Ordering::SeqCst),
        dropped_states: app.dropped.load(Ordering::Relaxed),
        capture_mode: app.capture,
        recording: app.recording.clone(),
    })
}

async fn library(State(app): State<Arc<AppState>>) -> Reply<ReferenceLibraryMsg> {
    let lib = app
        .library
        .lock()
        .map_err(|_| Failure::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "library lock poisoned"))?;
    Ok(Json(ReferenceLibraryMsg::from(&*lib)))
}

async fn record(State(app): State<Arc<AppState>>, Json(req): Json<RecordRefRequest>) -> Reply<RecordRefResponse> {
    ws::record_ref(&app, req.label)
        .await
        .map(|index| Json(RecordRefResponse { index }))
        .map_err(|m| Failure::new(StatusCode::CONFLICT, "conflict", m))
}

/// The request's config text, or the server's own config.
fn request_config(app: &AppState, text: Option<&str>, dir: Option<&str>) -> Result<SessionConfig, Failure> {
    match text {
        None => Ok((*app.config).clone()),
        Some(text) => {
            let base = std::path::Path::new(dir.unwrap_or("."));
            SessionConfig::parse(text, base).map_err(|e| Failure::invalid("config", e.to_string()))
        }
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, Failure> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Failure::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))
}

async fn replay_trace(State(app): State<Arc<AppState>>, Json(req): Json<ReplayRequest>) -> Reply<ReplayResponse> {
    let config = request_config(&app, req.config.as_deref(), req.config_dir.as_deref())?;
    let records = read_trace(&req.trace).map_err(|e| Failure::invalid("trace", e.to_string()))?;
    let out = blocking(move || replay(&records, &config)).await?;
    Ok(Json(ReplayResponse {
        ticks: out.log.records.len(),
        log: out.log.to_text(),
        tick_micros: out.tick_micros,
    }))
}

async fn metrics(Json(req): Json<MetricsRequest>) -> Reply<MetricsResponse> {
    if req.runs.is_empty() {
        return Err(Failure::usage("at least one log is required"));
    }
    blocking(move || {
        let mut rows = Vec::with_capacity(req.runs.len());
        for run in &req.runs {
            let log = SessionLog::parse(&run.log).map_err(|e| Failure::invalid("log", format!("{}: {e}", run.label)))?;
            rows.push((run.label.clone(), compute_metrics(&log, run.tick_micros.as_deref())));
        }
        Ok(Json(MetricsResponse {
            csv: metrics_csv(&rows),
            series_csv: series_csv(&rows[0].1),
        }))
    })
    .await?
}

async fn gen_trace(State(app): State<Arc<AppState>>, Json(req): Json<GenTraceRequest>) -> Reply<GenTraceResponse> {
    let scenario: Scenario = req.scenario.parse().map_err(Failure::usage)?;
    let config = request_config(&app, req.config.as_deref(), req.config_dir.as_deref())?;
    let mut spec = ScenarioSpec::new(scenario);
    if let Some(t) = req.ticks {
        if t == 0 {
            return Err(Failure::usage("ticks must be positive"));
        }
        spec.ticks = t;
    }
    spec.seed = req.seed;
    let trace = blocking(move || write_trace(&generate(&spec, &config))).await?;
    Ok(Json(GenTraceResponse { trace }))
}
