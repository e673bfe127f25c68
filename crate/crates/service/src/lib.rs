//! JSON-over-HTTP front end for the question answering pipeline.
//!
//! Endpoints: `POST /chat`, `POST /classify`, `POST /ner` and
//! `GET /health`. Every handler shares one immutable pipeline, so identical
//! requests get identical responses no matter how they interleave. Errors
//! are returned as `{"error": "..."}`.

mod api;
mod config;

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dsqa_core::classifier::{ClassifierError, QuestionClassifier};
use dsqa_core::dialog::{DialogError, Pipeline};
use dsqa_core::kb::KbError;
use dsqa_core::ner::{predict_entities, NerError};
use serde::de::DeserializeOwned;
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::net::TcpListener;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use api::{
    ChatRequest, ChatResponse, ClassifyResponse, EntityView, ErrorBody, FactView, HealthResponse,
    ModelVersions, NerResponse, TextRequest,
};
pub use config::ServiceConfig;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid service config: {0}")]
    Config(String),
    #[error("{what} not found at {}", path.display())]
    Missing { what: &'static str, path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Ner(#[from] NerError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Dialog(#[from] DialogError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Serve(std::io::Error),
}

/// What every handler sees: the pipeline and the fingerprints of the
/// models it was built from.
pub struct AppState {
    pipeline: Pipeline,
    versions: ModelVersions,
}

fn short_hash(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl AppState {
    pub fn new(pipeline: Pipeline) -> Result<Self, ServiceError> {
        let classifier = pipeline.classifier.to_json()?;
        let ner = pipeline.ner.to_json()?;
        // every map inside the index is ordered, so its Debug form is stable
        let kb = format!("{:?}", pipeline.index);
        let versions = ModelVersions {
            classifier: format!(
                "{}-{}",
                pipeline.classifier.kind(),
                short_hash(&[classifier.as_bytes()])
            ),
            ner: format!("{}-{}", pipeline.ner.kind(), short_hash(&[ner.as_bytes()])),
            kb: short_hash(&[kb.as_bytes()]),
        };
        Ok(AppState { pipeline, versions })
    }

    pub fn versions(&self) -> &ModelVersions {
        &self.versions
    }

    /// Same text and models give the same id.
    pub fn trace_id(&self, text: &str) -> String {
        let v = &self.versions;
        short_hash(&[
            v.classifier.as_bytes(),
            v.ner.as_bytes(),
            v.kb.as_bytes(),
            text.as_bytes(),
        ])
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

fn parse_body<T: DeserializeOwned>(body: Result<Bytes, BytesRejection>) -> Result<T, ApiError> {
    let bytes = body.map_err(|r| ApiError(r.status(), r.body_text()))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("invalid request: {e}")))
}

async fn chat(
    State(state): State<Arc<AppState>>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<ChatResponse>, ApiError> {
    let req: ChatRequest = parse_body(body)?;
    let turn = state.pipeline.handle_turn(&req.text);
    log::debug!("chat trace: {:?}", turn.trace.events.last());
    Ok(Json(ChatResponse::from_turn(
        &turn,
        state.trace_id(&req.text),
    )))
}

async fn classify(
    State(state): State<Arc<AppState>>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<ClassifyResponse>, ApiError> {
    let req: TextRequest = parse_body(body)?;
    Ok(Json(ClassifyResponse::new(
        &state.pipeline.classifier.log_probs(&req.text),
    )))
}

async fn ner(
    State(state): State<Arc<AppState>>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<NerResponse>, ApiError> {
    let req: TextRequest = parse_body(body)?;
    let entities = predict_entities(&state.pipeline.ner, &req.text)
        .iter()
        .map(EntityView::from_span)
        .collect();
    Ok(Json(NerResponse { entities }))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        model_versions: state.versions.clone(),
    })
}

async fn not_found() -> ApiError {
    ApiError(StatusCode::NOT_FOUND, "no such endpoint".into())
}

async fn method_not_allowed() -> ApiError {
    ApiError(StatusCode::METHOD_NOT_ALLOWED, "method not allowed".into())
}

fn cors_layer(origins: &[String]) -> CorsLayer {
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE])
}

/// All routes over `state`, with the body limit and CORS policy from
/// `config`.
pub fn router(state: Arc<AppState>, config: &ServiceConfig) -> Router {
    Router::new()
        .route("/chat", post(chat))
        .route("/classify", post(classify))
        .route("/ner", post(ner))
        .route("/health", get(health))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .layer(DefaultBodyLimit::max(config.body_limit))
        .layer(cors_layer(&config.cors_origins))
        .with_state(state)
}

/// Serves `router` on `listener` until `shutdown` resolves, then lets
/// in-flight requests finish.
pub async fn serve_on(
    listener: TcpListener,
    router: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    axum::serve(listener, router)
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(ServiceError::Serve)
}

/// Resolves on Ctrl-C or, on Unix, SIGTERM.
pub async fn termination_signal() {
    let ctrl_c = async {
        if let Err(e) = tokio::signal::ctrl_c().await {
            log::error!("cannot listen for Ctrl-C: {e}");
            std::future::pending::<()>().await;
        }
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(e) => {
                log::error!("cannot listen for SIGTERM: {e}");
                std::future::pending::<()>().await;
            }
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    log::info!("shutting down");
}

/// Validates `config`, loads everything it names, binds and serves until a
/// termination signal arrives.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    config.validate()?;
    let state = Arc::new(AppState::new(config.load_pipeline()?)?);
    log::info!("models: {:?}", state.versions());
    let addr = config.bind_addr()?;
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind {
            addr: config.bind.clone(),
            source,
        })?;
    log::info!("listening on {addr}");
    serve_on(listener, router(state, &config), termination_signal()).await
}
