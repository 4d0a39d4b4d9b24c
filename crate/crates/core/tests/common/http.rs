use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use prc_core::backend::ReplayBackend;
use prc_core::engine::Command;
use prc_core::events::StreamEvent;
use prc_core::harness::LoadedScenario;
use prc_core::service::{router, Service, ServiceConfig};
use serde_json::{json, Value};
use tokio::time::Instant;
use tower::ServiceExt;

pub fn encode_segment(s: &str) -> String {
    s.bytes()
        .map(|b| {
            if b.is_ascii_alphanumeric() || b"-_.~".contains(&b) {
                (b as char).to_string()
            } else {
                format!("%{b:02X}")
            }
        })
        .collect()
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

pub fn command_request(session: &str, command: &Command) -> (Method, String, Option<String>) {
    let base = format!("/sessions/{session}");
    match command {
        Command::Submit { text } => (Method::POST, format!("{base}/messages"), Some(json!({"text": text}).to_string())),
        Command::SetInline { turn, label, value } => (
            Method::PATCH,
            format!("{base}/turns/{turn}/options/{}", encode_segment(label)),
            Some(json!({"value": value}).to_string()),
        ),
        Command::SetSession { label, value } => (
            Method::PATCH,
            format!("{base}/session-options/{}", encode_segment(label)),
            Some(json!({"value": value}).to_string()),
        ),
        Command::Pin { turn, label } => (
            Method::POST,
            format!("{base}/turns/{turn}/options/{}/pin", encode_segment(label)),
            None,
        ),
        Command::Unpin { label } => (
            Method::POST,
            format!("{base}/session-options/{}/unpin", encode_segment(label)),
            None,
        ),
        Command::Delete { tier, label } => {
            let tier = serde_json::to_value(tier).unwrap();
            (
                Method::DELETE,
                format!("{base}/options/{}/{}", tier.as_str().unwrap(), encode_segment(label)),
                None,
            )
        }
        Command::RequestControls { utterance } => (
            Method::POST,
            format!("{base}/controls"),
            Some(json!({"utterance": utterance}).to_string()),
        ),
        Command::Import { json } => (Method::PUT, format!("{base}/session-options"), Some(json.clone())),
    }
}

/// Parses `data:` payloads out of a server-sent event body.
pub fn parse_sse(text: &str) -> Vec<StreamEvent> {
    text.split("\n\n")
        .filter_map(|frame| frame.lines().find_map(|l| l.strip_prefix("data: ")))
        .map(|data| serde_json::from_str(data).expect("event json"))
        .collect()
}

pub struct HttpRun {
    /// Events as a live subscriber saw them, with virtual arrival time in ms.
    pub live: Vec<(u64, StreamEvent)>,
    pub final_state: Value,
}

/// Plays a scenario against the HTTP surface with a replay backend. Must run
/// on a current-thread runtime with paused time.
pub async fn run_over_http(loaded: &LoadedScenario) -> HttpRun {
    let header = &loaded.scenario.header;
    let backend = Arc::new(
        ReplayBackend::new(loaded.fixture.clone()).with_chunk_delay(Duration::from_millis(header.chunk_delay_ms)),
    );
    let config = ServiceConfig {
        default_mode: header.mode,
        engine: loaded.scenario.engine_config(),
        ..ServiceConfig::default()
    };
    let app = router(Service::new(backend.clone(), config));
    let start = Instant::now();

    let (status, created) = call(&app, Method::POST, "/sessions", Some(json!({"mode": header.mode}).to_string())).await;
    assert_eq!(status, StatusCode::CREATED);
    let session = created["session"].as_str().unwrap().to_string();
    assert_eq!(session, header.session);

    let events_req = Request::get(format!("/sessions/{session}/events")).body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(events_req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let mut body = resp.into_body();
    let seen = Arc::new(std::sync::Mutex::new(Vec::new()));
    let sink = seen.clone();
    let subscriber = tokio::spawn(async move {
        let mut buf = String::new();
        while let Some(frame) = body.frame().await {
            let Ok(frame) = frame else { break };
            if let Ok(data) = frame.into_data() {
                buf.push_str(std::str::from_utf8(&data).unwrap());
                while let Some(end) = buf.find("\n\n") {
                    let chunk: String = buf.drain(..end + 2).collect();
                    for e in parse_sse(&chunk) {
                        sink.lock().unwrap().push((start.elapsed().as_millis() as u64, e));
                    }
                }
            }
        }
    });

    for step in &loaded.scenario.steps {
        tokio::time::sleep_until(start + Duration::from_millis(step.at)).await;
        let (method, uri, body) = command_request(&session, &step.command);
        let (status, reply) = call(&app, method, &uri, body).await;
        match &step.expect_error {
            Some(name) => assert_eq!(reply["error"], json!(name), "{uri}: {reply}"),
            None => assert!(status.is_success(), "{uri}: {status} {reply}"),
        }
    }

    let final_state = loop {
        let (_, snap) = call(&app, Method::GET, &format!("/sessions/{session}"), None).await;
        if snap["quiescent"] == json!(true) {
            break snap["state"].clone();
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    };
    // let the subscriber drain what is already buffered
    tokio::time::sleep(Duration::from_millis(1)).await;
    drop(app);
    subscriber.abort();
    let live = std::mem::take(&mut *seen.lock().unwrap());
    HttpRun { live, final_state }
}
