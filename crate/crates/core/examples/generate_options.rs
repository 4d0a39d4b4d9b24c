//! Runs inline option generation against a scripted backend. The first
//! completion is garbage, so the module retries once.

use prc_core::backend::{BackendConfig, Fixture, ReplayBackend, ScriptedCompletion};
use prc_core::option_module::{generate_inline_options, GenerationRequest};
use prc_core::options::OptionSet;

#[tokio::main]
async fn main() {
    let doc = include_str!("../fixtures/documents/00_example_output.json");
    let backend = ReplayBackend::new(
        Fixture::new("example")
            .push(ScriptedCompletion::from_text("I cannot produce JSON today.", 8))
            .push(ScriptedCompletion::from_text(doc, 32)),
    );
    let request = GenerationRequest::inline(Vec::new(), "How do I reverse a linked list?", OptionSet::new(), 1)
        .expect("non-empty input");
    let outcome = generate_inline_options(&backend, &BackendConfig::default(), request, |_| {}).await;
    match &outcome.error {
        Some(e) => println!("generation failed: {e}"),
        None => {
            for option in &outcome.accepted {
                println!("{:<28} {:?}", option.label(), option.value());
            }
        }
    }
    for warning in &outcome.warnings {
        println!("warning: {}", serde_json::to_string(warning).unwrap());
    }
}
