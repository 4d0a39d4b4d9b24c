use prc_core::options::{parse_option_document, ControlValue, Origin};
use prc_core::session::{Mode, SessionError, SessionState, Tier, TurnStatus};
use prc_core::store::{canonical_state, DirStore, StoreError};

fn with_turn() -> SessionState {
    let mut s = SessionState::new("t1", Mode::Dynamic);
    let turn = s.begin_turn("how do loops work?").unwrap();
    let options = parse_option_document(
        include_str!("../fixtures/documents/00_example_output.json"),
        Origin::GeneratedInline,
    )
    .unwrap();
    s.set_inline_options(turn, options).unwrap();
    s.set_status(turn, TurnStatus::GeneratingResponse).unwrap();
    s.complete_response(turn, "a loop repeats".into()).unwrap();
    s
}

#[test]
fn store_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let store = DirStore::open(dir.path()).unwrap();
    let state = with_turn();
    store.persist(&state).unwrap();
    let back = store.load("t1").unwrap();
    assert_eq!(back, state);
    assert_eq!(canonical_state(&back), canonical_state(&state));
    assert!(store.exists("t1"));
}

#[test]
fn missing_and_bad_ids() {
    let dir = tempfile::tempdir().unwrap();
    let store = DirStore::open(dir.path()).unwrap();
    assert!(matches!(store.load("nope"), Err(StoreError::NotFound(_))));
    assert!(matches!(store.load("../etc"), Err(StoreError::InvalidId(_))));
}

#[test]
fn pin_moves_option_between_tiers() {
    let mut s = with_turn();
    let label = s.latest_turn().unwrap().inline_options.labels()[0].clone();
    s.pin_option(1, &label).unwrap();
    assert!(s.session_options.contains_label(&label));
    assert!(!s.latest_turn().unwrap().inline_options.contains_label(&label));
    s.unpin_option(&label).unwrap();
    assert!(!s.session_options.contains_label(&label));
    assert!(s.latest_turn().unwrap().inline_options.contains_label(&label));
}

#[test]
fn value_must_be_a_choice_description() {
    let mut s = with_turn();
    let option = s.latest_turn().unwrap().inline_options.iter().find(|o| o.as_choice().is_some()).unwrap().clone();
    let err = s
        .update_inline_option(1, option.label(), ControlValue::from("definitely not offered"))
        .unwrap_err();
    assert_eq!(err.name(), "NotACanonicalChoice");
}

#[test]
fn delete_unknown_label() {
    let mut s = with_turn();
    assert_eq!(
        s.delete_option(Tier::Session, "Ghost"),
        Err(SessionError::UnknownLabel("Ghost".into()))
    );
}

#[test]
fn import_rejects_duplicate_labels_and_keeps_state() {
    let mut s = SessionState::new("t2", Mode::Dynamic);
    let before = s.export_session_options();
    let dup = include_str!("../fixtures/documents/21_duplicate_labels.json");
    assert!(s.import_session_options(dup).is_err());
    assert_eq!(s.export_session_options(), before);
}

#[test]
fn static_sessions_start_with_preset() {
    let s = SessionState::new("t3", Mode::Static);
    assert_eq!(s.session_options.len(), 6);
}
