use std::sync::{Arc, OnceLock};

use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use dsqa_core::fixtures;
use dsqa_service::{
    router, serve_on, AppState, ChatResponse, ClassifyResponse, ErrorBody, HealthResponse,
    NerResponse, ServiceConfig, ServiceError,
};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tower::ServiceExt;

fn state() -> Arc<AppState> {
    static STATE: OnceLock<Arc<AppState>> = OnceLock::new();
    STATE
        .get_or_init(|| Arc::new(AppState::new(fixtures::demo_pipeline(1)).unwrap()))
        .clone()
}

fn app() -> Router {
    router(state(), &ServiceConfig::default())
}

async fn send(
    app: Router,
    method: Method,
    uri: &str,
    body: impl Into<Body>,
) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(body.into())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    (
        status,
        to_bytes(resp.into_body(), usize::MAX)
            .await
            .unwrap()
            .to_vec(),
    )
}

async fn post_json<T: serde::de::DeserializeOwned>(uri: &str, body: serde_json::Value) -> T {
    let (status, bytes) = send(app(), Method::POST, uri, body.to_string()).await;
    assert_eq!(
        status,
        StatusCode::OK,
        "{}",
        String::from_utf8_lossy(&bytes)
    );
    serde_json::from_slice(&bytes).unwrap()
}

async fn expect_error(
    method: Method,
    uri: &str,
    body: impl Into<Body>,
    status: StatusCode,
) -> String {
    let (got, bytes) = send(app(), method, uri, body).await;
    assert_eq!(got, status, "{}", String::from_utf8_lossy(&bytes));
    let err: ErrorBody = serde_json::from_slice(&bytes).expect("error body is JSON");
    assert!(!err.error.is_empty());
    err.error
}

#[tokio::test]
async fn health_reports_versions() {
    let (status, bytes) = send(app(), Method::GET, "/health", Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    let h: HealthResponse = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(h.status, "ok");
    assert!(h.model_versions.classifier.starts_with("linear-"));
    assert!(h.model_versions.ner.starts_with("crf-"));
    assert_eq!(h.model_versions.kb.len(), 16);
}

#[tokio::test]
async fn chat_answers_effectiveness_question() {
    let r: ChatResponse = post_json(
        "/chat",
        serde_json::json!({"text": "Does Niacin really work?"}),
    )
    .await;
    assert_eq!(r.qtype, "Effectiveness");
    assert!(!r.answer.is_empty());
    assert!((0.0..=1.0).contains(&r.confidence));

    let r: ChatResponse =
        post_json("/chat", serde_json::json!({"session_id": "s1", "text": "are there any proven benefits to taking shark cartilage?"}))
            .await;
    assert!(
        r.answer
            .contains("is effective for Degenerative Polyarthritis"),
        "{}",
        r.answer
    );
    assert_eq!(
        r.facts[0].text,
        "is effective for Degenerative Polyarthritis"
    );
    assert_eq!(r.entities[0].etype, "DS");
    assert!(r.entities[0].cui.is_some());
    assert_eq!(r.fallback, None);
}

#[tokio::test]
async fn empty_text_is_a_turn() {
    let r: ChatResponse = post_json("/chat", serde_json::json!({"text": ""})).await;
    assert!(!r.answer.is_empty());
    assert!(r.fallback.is_some());
}

#[tokio::test]
async fn diagnostic_endpoints() {
    let text = "Is kratom safe during pregnancy?";
    let c: ClassifyResponse = post_json("/classify", serde_json::json!({ "text": text })).await;
    assert_eq!(c.qtype, "Safety");
    assert_eq!(c.probabilities.len(), 8);
    assert!((c.probabilities.values().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(c.confidence, c.probabilities["Safety"]);
    let n: NerResponse = post_json("/ner", serde_json::json!({ "text": text })).await;
    assert_eq!(n.entities.len(), 1);
    assert_eq!(
        (n.entities[0].surface.as_str(), n.entities[0].etype.as_str()),
        ("kratom", "DS")
    );
    assert_eq!((n.entities[0].start, n.entities[0].end), (3, 9));
}

#[tokio::test]
async fn malformed_requests_get_json_errors() {
    let msg = expect_error(
        Method::POST,
        "/chat",
        r#"{"question": "hi"}"#,
        StatusCode::BAD_REQUEST,
    )
    .await;
    assert!(msg.contains("text"), "{msg}");
    expect_error(
        Method::POST,
        "/classify",
        "not json",
        StatusCode::BAD_REQUEST,
    )
    .await;
    expect_error(
        Method::POST,
        "/ner",
        r#"{"text": 5}"#,
        StatusCode::BAD_REQUEST,
    )
    .await;
    expect_error(
        Method::POST,
        "/ner",
        vec![b'"', 0xff, b'"'],
        StatusCode::BAD_REQUEST,
    )
    .await;
    expect_error(
        Method::GET,
        "/nowhere",
        Body::empty(),
        StatusCode::NOT_FOUND,
    )
    .await;
    expect_error(
        Method::GET,
        "/chat",
        Body::empty(),
        StatusCode::METHOD_NOT_ALLOWED,
    )
    .await;
}

#[tokio::test]
async fn oversized_body_is_rejected() {
    let limit = ServiceConfig::default().body_limit;
    let text = "a".repeat(2 * limit);
    for uri in ["/chat", "/classify", "/ner"] {
        let body = serde_json::json!({ "text": text }).to_string();
        expect_error(Method::POST, uri, body, StatusCode::PAYLOAD_TOO_LARGE).await;
    }
    // just under the limit is fine
    let body = serde_json::json!({ "text": "a".repeat(limit - 20) }).to_string();
    let (status, _) = send(app(), Method::POST, "/classify", body).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn cors_preflight_allows_configured_origin() {
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/chat")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app().oneshot(req).await.unwrap();
    assert_eq!(
        resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN],
        "http://localhost:5173"
    );
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/chat")
        .header(header::ORIGIN, "http://elsewhere.example")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app().oneshot(req).await.unwrap();
    assert!(!resp
        .headers()
        .contains_key(header::ACCESS_CONTROL_ALLOW_ORIGIN));
}

#[tokio::test]
async fn trace_ids_follow_the_text() {
    let a: ChatResponse = post_json(
        "/chat",
        serde_json::json!({"text": "Is it safe to take melatonin?"}),
    )
    .await;
    let b: ChatResponse = post_json(
        "/chat",
        serde_json::json!({"session_id": "x", "text": "Is it safe to take melatonin?"}),
    )
    .await;
    let c: ChatResponse = post_json(
        "/chat",
        serde_json::json!({"text": "Is it safe to take melatonin"}),
    )
    .await;
    assert_eq!(a, b);
    assert_ne!(a.trace_id, c.trace_id);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn parallel_identical_requests_agree() {
    let body = serde_json::json!({"text": "Can I take St. John's Wort with warfarin?"}).to_string();
    let tasks: Vec<_> = (0..64)
        .map(|_| {
            let body = body.clone();
            tokio::spawn(async move { send(app(), Method::POST, "/chat", body).await })
        })
        .collect();
    let mut bodies = Vec::new();
    for t in tasks {
        let (status, bytes) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        bodies.push(bytes);
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test]
async fn real_socket_and_graceful_shutdown() {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve_on(listener, app(), async {
        let _ = stopped.await;
    }));
    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    stream
        .write_all(b"GET /health HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut reply = String::new();
    stream.read_to_string(&mut reply).await.unwrap();
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains("\"status\":\"ok\""));
    stop.send(()).unwrap();
    server.await.unwrap().unwrap();
}

#[tokio::test]
async fn serve_fails_fast_on_missing_files() {
    let config = ServiceConfig {
        classifier_model: "/nonexistent/model.json".into(),
        ..ServiceConfig::default()
    };
    let err = dsqa_service::serve(config).await.unwrap_err();
    assert!(matches!(err, ServiceError::Missing { .. }), "{err}");
}

#[tokio::test]
async fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (classifier, ner) = fixtures::synthetic_models(200, 3);
    std::fs::create_dir(dir.path().join("models")).unwrap();
    classifier
        .save(dir.path().join("models/classifier.json"))
        .unwrap();
    ner.save(dir.path().join("models/ner.json")).unwrap();
    fixtures::index()
        .export_json(dir.path().join("kb"))
        .unwrap();
    let path = dir.path().join("service.toml");
    std::fs::write(&path, "bind = \"127.0.0.1:0\"\nconfidence_floor = 0.3\n").unwrap();
    let config = ServiceConfig::load(&path).unwrap();
    assert_eq!(config.kb_dir, dir.path().join("kb"));
    let pipeline = config.load_pipeline().unwrap();
    assert_eq!(pipeline.config.confidence_floor, 0.3);
    assert_eq!(pipeline.index, fixtures::index());
}
