//! Starts the HTTP service on an ephemeral port with a replay backend, sends a
//! prompt, and reads back the buffered event stream.

use std::sync::Arc;
use std::time::Duration;

use prc_core::backend::{Fixture, ReplayBackend, ScriptedCompletion};
use prc_core::service::{serve, Service, ServiceConfig};
use serde_json::{json, Value};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixture = Fixture::new("http-example")
        .push(ScriptedCompletion::from_text(include_str!("../fixtures/documents/02_single_radio.json"), 24))
        .push(ScriptedCompletion::from_text("Sorting puts items in order.", 6));
    let backend = Arc::new(ReplayBackend::new(fixture).with_chunk_delay(Duration::from_millis(2)));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    tokio::spawn(serve(Service::new(backend, ServiceConfig::default()), listener));

    let http = reqwest::Client::new();
    let created: Value = http.post(format!("{base}/sessions")).json(&json!({})).send().await?.json().await?;
    let id = created["session"].as_str().unwrap_or_default().to_string();
    http.post(format!("{base}/sessions/{id}/messages"))
        .json(&json!({"text": "What does sorting do?"}))
        .send()
        .await?;
    loop {
        let snap: Value = http.get(format!("{base}/sessions/{id}")).send().await?.json().await?;
        if snap["quiescent"] == json!(true) {
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let events = http
        .get(format!("{base}/sessions/{id}/events?follow=false"))
        .send()
        .await?
        .text()
        .await?;
    for line in events.lines().filter(|l| l.starts_with("event: ")) {
        println!("{line}");
    }
    Ok(())
}
