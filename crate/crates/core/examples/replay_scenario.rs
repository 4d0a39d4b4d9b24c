//! Replays the recorded interaction trace on the virtual clock and prints a
//! timeline of calls and chat completions.

use prc_core::harness::{Entry, LoadedScenario};

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/scenarios/formula_walkthrough.scenario.jsonl");
    let loaded = LoadedScenario::load(path).expect("scenario loads");
    let transcript = loaded.run().expect("scenario runs");
    for entry in &transcript.entries {
        match entry {
            Entry::Action { t, action, .. } => println!("{t:>6}ms action {}", serde_json::to_string(action).unwrap()),
            Entry::CallStarted { t, call, purpose } => println!("{t:>6}ms call {call} {purpose:?}"),
            Entry::CallCancelled { t, cancel } => println!("{t:>6}ms cancel {cancel}"),
            Entry::Event { .. } => {}
        }
    }
    println!("chat generations: {}", transcript.chat_generations());
    println!("final refinements:\n{}", transcript.final_refinement_block());
}
