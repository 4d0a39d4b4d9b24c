mod common;

use std::process::Command as Proc;

use common::crate_path;
use prc_core::events::EventKind;
use prc_core::harness::{diff_golden, LoadedScenario};

const SCENARIOS: &[&str] = &["formula_walkthrough", "static_three_prompts", "decode_fault"];

fn load(name: &str) -> LoadedScenario {
    LoadedScenario::load(crate_path(&format!("fixtures/scenarios/{name}.scenario.jsonl"))).unwrap()
}

#[test]
fn goldens_match() {
    for name in SCENARIOS {
        let golden = std::fs::read_to_string(crate_path(&format!("fixtures/scenarios/{name}.golden.jsonl"))).unwrap();
        let actual = load(name).run().unwrap().to_text();
        if let Err(m) = diff_golden(&golden, &actual) {
            panic!("{name}: {m}");
        }
    }
}

#[test]
fn static_scenario_never_generates_options() {
    let t = load("static_three_prompts").run().unwrap();
    assert_eq!(t.option_generation_calls(), 0);
    assert_eq!(t.chat_generations(), 3);
    assert_eq!(t.count(EventKind::ChatComplete), 3);
}

#[test]
fn decode_fault_reports_one_error_and_still_answers() {
    let t = load("decode_fault").run().unwrap();
    assert_eq!(t.count(EventKind::Error), 1);
    let first = &t.snapshot.turns[0];
    assert!(first.inline_options.is_empty());
    assert!(first.assistant_text.is_some());
}

fn prc() -> Proc {
    Proc::new(env!("CARGO_BIN_EXE_prc"))
}

#[test]
fn cli_replay_accepts_golden() {
    let out = prc()
        .args(["replay", "--scenario"])
        .arg(crate_path("fixtures/scenarios/formula_walkthrough.scenario.jsonl"))
        .arg("--golden")
        .arg(crate_path("fixtures/scenarios/formula_walkthrough.golden.jsonl"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn cli_replay_reports_first_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let golden = dir.path().join("wrong.jsonl");
    let text = std::fs::read_to_string(crate_path("fixtures/scenarios/formula_walkthrough.golden.jsonl")).unwrap();
    std::fs::write(&golden, text.replacen("numbered steps", "bulleted steps", 1)).unwrap();
    let out = prc()
        .args(["replay", "--scenario"])
        .arg(crate_path("fixtures/scenarios/formula_walkthrough.scenario.jsonl"))
        .arg("--golden")
        .arg(&golden)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
}

#[test]
fn cli_serve_replay_needs_fixture_dir() {
    let out = prc()
        .args(["serve", "--backend", "replay", "--port", "0", "--fixtures", "/definitely/not/here"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}
