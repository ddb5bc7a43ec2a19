//! HTTP+JSON front end of the survey store.
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/sessions` | `{"participant": {"knowledge_area": ..}, "technique"?: ..}` |
//! | GET | `/sessions/{id}/step` | |
//! | POST | `/sessions/{id}/advance` | `{"from"?: phase}` or empty |
//! | POST | `/sessions/{id}/predictions` | `{"phase"?: .., "answers": [{"review_id", "label"}]}` |
//! | POST | `/sessions/{id}/utility` | `{"review_id", "ranks": {"frequent_terms": 1, ..}}` |
//! | GET | `/export` | |
//!
//! Errors are `{"code", "message", "details"}` with a matching status.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use reviewad_core::explain::Technique;
use reviewad_core::survey::{
    KnowledgeArea, ParticipantInfo, Phase, PredictionSubmission, SessionState, StepResponse,
    SurveyExport, SurveyStore, UtilitySubmission,
};
use reviewad_core::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    pub details: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>, details: Value) -> Self {
        ApiError {
            status: status.as_u16(),
            code: code.into(),
            message: message.into(),
            details,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message, json!({}))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code, mut details) = match &e {
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found", json!({})),
            Error::Conflict(_) => (StatusCode::CONFLICT, "conflict", json!({})),
            Error::Protocol(_) => (StatusCode::CONFLICT, "protocol_violation", json!({})),
            Error::IncompleteAnswers { missing } => (
                StatusCode::UNPROCESSABLE_ENTITY,
                "incomplete_answers",
                json!({ "missing": missing }),
            ),
            Error::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation", json!({})),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal", json!({})),
        };
        details["module"] = json!(e.module());
        ApiError::new(status, code, e.to_string(), details)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

/// An empty body reads as `{}`.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    let bytes: &[u8] = if body.iter().all(u8::is_ascii_whitespace) {
        b"{}"
    } else {
        body
    };
    serde_json::from_slice(bytes)
        .map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

#[derive(Deserialize)]
struct RawParticipant {
    knowledge_area: String,
}

#[derive(Deserialize)]
struct CreateSession {
    participant: RawParticipant,
    #[serde(default)]
    technique: Option<Technique>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AdvanceRequest {
    #[serde(default)]
    from: Option<Phase>,
}

/// Acknowledgement of a state change; never carries items or labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub technique: Technique,
    pub phase: Phase,
    pub utility_completed: usize,
}

impl From<SessionState> for SessionSummary {
    fn from(s: SessionState) -> Self {
        SessionSummary {
            session_id: s.session_id,
            technique: s.technique,
            phase: s.phase,
            utility_completed: s.utility.len(),
        }
    }
}

type Store = State<Arc<SurveyStore>>;

async fn create_session(
    State(store): Store,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<SessionSummary>)> {
    let req: CreateSession = parse_body(&body)?;
    let area: KnowledgeArea = req.participant.knowledge_area.parse().map_err(|e: Error| {
        let mut err = ApiError::from(e);
        err.details["knowledge_areas"] = json!(KnowledgeArea::vocabulary());
        err
    })?;
    let state = store.create_session(
        ParticipantInfo {
            knowledge_area: area,
        },
        req.technique,
    )?;
    Ok((StatusCode::CREATED, Json(state.into())))
}

async fn get_step(State(store): Store, Path(id): Path<String>) -> ApiResult<Json<StepResponse>> {
    Ok(Json(store.step(&id)?))
}

async fn advance(
    State(store): Store,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<StepResponse>> {
    let req: AdvanceRequest = parse_body(&body)?;
    Ok(Json(store.advance(&id, req.from)?))
}

async fn submit_predictions(
    State(store): Store,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<SessionSummary>> {
    let req: PredictionSubmission = parse_body(&body)?;
    Ok(Json(store.submit_predictions(&id, req)?.into()))
}

async fn submit_utility(
    State(store): Store,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<SessionSummary>> {
    let req: UtilitySubmission = parse_body(&body)?;
    Ok(Json(store.submit_utility(&id, req)?.into()))
}

async fn export(State(store): Store) -> Json<SurveyExport> {
    Json(store.export())
}

async fn health() -> &'static str {
    "ok"
}

/// CORS policy: an empty origin list allows any origin.
fn cors(origins: &[String]) -> Result<CorsLayer, Error> {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE]);
    if origins.is_empty() {
        return Ok(layer.allow_origin(Any));
    }
    let values = origins
        .iter()
        .map(|o| {
            HeaderValue::from_str(o).map_err(|_| Error::Config {
                key: "survey.cors_origins".into(),
                message: format!("`{o}` is not a valid origin"),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(layer.allow_origin(AllowOrigin::list(values)))
}

pub fn router(store: Arc<SurveyStore>, cors_origins: &[String]) -> Result<Router, Error> {
    Ok(Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/step", get(get_step))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/predictions", post(submit_predictions))
        .route("/sessions/{id}/utility", post(submit_utility))
        .route("/export", get(export))
        .layer(cors(cors_origins)?)
        .with_state(store))
}

/// Serves on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    router: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router)
        .with_graceful_shutdown(shutdown)
        .await
}

fn bind(addr: &str) -> std::io::Result<std::net::TcpListener> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    Ok(listener)
}

fn runtime() -> std::io::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
}

/// Blocks serving `addr` until Ctrl-C; `on_ready` receives the bound address.
pub fn run_until_ctrl_c(
    store: Arc<SurveyStore>,
    cors_origins: &[String],
    addr: &str,
    on_ready: impl FnOnce(SocketAddr),
) -> Result<(), Error> {
    let app = router(store, cors_origins)?;
    let listener = bind(addr)?;
    on_ready(listener.local_addr()?);
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener)?;
        serve(listener, app, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })?;
    Ok(())
}

/// A server on a background thread, stopped on drop.
pub struct RunningServer {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl RunningServer {
    pub fn spawn(
        store: Arc<SurveyStore>,
        cors_origins: &[String],
        addr: &str,
    ) -> Result<Self, Error> {
        let app = router(store, cors_origins)?;
        let listener = bind(addr)?;
        let local = listener.local_addr()?;
        let rt = runtime()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                serve(listener, app, async {
                    let _ = rx.await;
                })
                .await
            })
        });
        Ok(RunningServer {
            addr: local,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting connections and waits for the server thread.
    pub fn stop(mut self) -> std::io::Result<()> {
        self.shutdown_and_join()
    }

    fn shutdown_and_join(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t
                .join()
                .unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        let _ = self.shutdown_and_join();
    }
}
