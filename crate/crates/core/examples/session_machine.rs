//! Drives the sans-io session engine by hand: every backend byte and timer
//! expiry is supplied by the caller, and the engine answers with effects.

use prc_core::engine::{CallPurpose, Command, Effect, EngineConfig, SessionMachine};
use prc_core::session::Mode;

fn main() {
    let mut machine = SessionMachine::new("demo", Mode::Static, EngineConfig::default());
    machine.command(Command::Submit { text: "Explain recursion".into() }).unwrap();

    let mut chat_call = None;
    for effect in machine.take_effects() {
        match effect {
            Effect::StartCall { call, purpose: CallPurpose::Chat { .. }, .. } => chat_call = Some(call),
            Effect::Emit(e) => println!("event {} {}", e.revision, e.kind.as_str()),
            other => println!("{other:?}"),
        }
    }
    let call = chat_call.expect("static mode answers immediately");
    for piece in ["A function ", "that calls ", "itself."] {
        machine.on_chunk(call, piece);
    }
    machine.on_call_finished(call, Ok(()));
    for effect in machine.take_effects() {
        if let Effect::Emit(e) = effect {
            println!("event {} {} {}", e.revision, e.kind.as_str(), e.payload);
        }
    }
    println!("quiescent: {}", machine.is_quiescent());
}
