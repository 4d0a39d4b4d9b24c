//! Feeds an option document to the incremental decoder a few bytes at a time
//! and prints each event as it becomes available.

use prc_core::decoder::{DecodeEvent, Decoder};
use prc_core::options::Origin;

fn main() {
    let text = include_str!("../fixtures/documents/05_code_fence.json");
    let mut decoder = Decoder::new(Origin::GeneratedInline);
    for chunk in text.as_bytes().chunks(7) {
        let events = match decoder.feed(chunk) {
            Ok(events) => events,
            Err(e) => {
                eprintln!("decode failed: {e}");
                return;
            }
        };
        for event in events {
            match event {
                DecodeEvent::OptionField { index, label, kind } => println!("#{index} `{label}` ({kind}) arriving"),
                DecodeEvent::OptionCompleted { index, option } => {
                    println!("#{index} complete, value {:?}", option.value())
                }
                DecodeEvent::OptionRejected { index, error, .. } => println!("#{index} rejected: {error}"),
                DecodeEvent::DocumentCompleted { options } => println!("done: {} options", options.len()),
                _ => {}
            }
        }
    }
}
