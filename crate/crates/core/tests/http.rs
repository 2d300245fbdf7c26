//! Runs the HTTP clients against a local chat-completion server.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use capqual_core::enhance::{EnhanceConfig, Enhancer, HttpScorer, MockScorer};
use capqual_core::scoring::http::HttpBackend;
use capqual_core::scoring::mock::MockBackend;
use capqual_core::scoring::{Annotator, BackendConfig, PromptFamily};
use capqual_core::RawPair;
use serde_json::{json, Value};

const KEY_VAR: &str = "CAPQUAL_HTTP_TEST_KEY";

#[derive(Default)]
struct Server {
    calls: AtomicUsize,
}

fn caption_of(body: &Value) -> String {
    let parts = body["messages"][1]["content"].as_array().unwrap();
    let text = parts.iter().find(|p| p["type"] == "text").unwrap()["text"].as_str().unwrap();
    text.strip_prefix("Caption: ").unwrap().to_owned()
}

async fn completions(State(server): State<Arc<Server>>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let n = server.calls.fetch_add(1, Ordering::SeqCst);
    if headers.get("authorization").and_then(|v| v.to_str().ok()) != Some("Bearer sk-test") {
        return (StatusCode::UNAUTHORIZED, "missing key").into_response();
    }
    if body["stream"] == json!(true) {
        // Scorer request: one user turn with an image and the instructions.
        let text = body["messages"][0]["content"][1]["text"].as_str().unwrap();
        let caption = text.lines().nth(1).unwrap().split_once(": ").unwrap().1;
        let reply = MockScorer::new(4).reply_for("remote", caption);
        let mut sse = String::new();
        for chunk in reply.as_bytes().chunks(7) {
            let piece = String::from_utf8_lossy(chunk);
            let event = json!({"choices": [{"delta": {"content": piece}}]});
            sse.push_str(&format!("data: {event}\n\n"));
        }
        sse.push_str("data: [DONE]\n\n");
        return ([("content-type", "text/event-stream")], sse).into_response();
    }
    if n == 0 {
        return (StatusCode::SERVICE_UNAVAILABLE, "warming up").into_response();
    }
    let image = body["messages"][1]["content"][0]["image_url"]["url"].as_str().unwrap();
    assert!(image.starts_with("data:image/png;base64,"), "{image}");
    assert_eq!(body["response_format"]["json_schema"]["strict"], json!(true));
    assert_eq!(body["temperature"], json!(0.0));
    let reply = MockBackend::new(4).reply_object(PromptFamily::Score, "remote", &caption_of(&body));
    Json(json!({"choices": [{"message": {"role": "assistant", "content": Value::Object(reply).to_string()}}]}))
        .into_response()
}

async fn serve() -> (String, Arc<Server>) {
    let state = Arc::new(Server::default());
    let app = Router::new()
        .route("/v1/chat/completions", post(completions))
        .with_state(state.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1/chat/completions"), state)
}

fn config(endpoint: String) -> BackendConfig {
    let mut config = BackendConfig {
        endpoint,
        credential_env: KEY_VAR.into(),
        backoff: Duration::from_millis(1),
        timeout: Duration::from_secs(10),
        ..BackendConfig::default()
    };
    config.params.insert("temperature".into(), json!(0.0));
    config
}

#[tokio::test]
async fn annotation_and_streaming_over_http() {
    std::env::set_var(KEY_VAR, "sk-test");
    let (endpoint, server) = serve().await;
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("cat.png");
    std::fs::write(&image, [0x89, b'P', b'N', b'G']).unwrap();
    let pair = RawPair::new("p1", image.to_str().unwrap(), "a cat on a mat");

    let config = config(endpoint);
    let annotator = Annotator::new(HttpBackend::new(&config).unwrap(), config.clone());
    let scored = annotator.score_pair(&pair).await;
    let record = scored.outcome.expect("scored after one transient failure");
    assert_eq!(record.scores, MockBackend::new(4).score_for("remote", "a cat on a mat"));
    assert_eq!(scored.archive.attempts.len(), 2);
    assert_eq!(server.calls.load(Ordering::SeqCst), 2);

    let enhancer = Enhancer::new(HttpScorer::new(&config).unwrap(), EnhanceConfig::default()).unwrap();
    let out = enhancer.enhance_pair(&pair).await;
    let expected = MockScorer::new(4).scores.overall_for("remote", "a cat on a mat");
    assert_eq!(out.overall_score, Some(expected));
    assert_eq!(out.was_rewritten, expected < 8);
}
