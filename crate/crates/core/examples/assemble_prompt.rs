//! Builds the chat prompt for a session that has the static preset plus one
//! inline option, and shows the framed refinement block.

use prc_core::options::{OptionSet, PromptOption};
use prc_core::prompt::{assemble_chat_prompt, serialize_refinements, Exchange};
use prc_core::session::static_preset;

fn main() {
    let inline = OptionSet::from_options(vec![PromptOption::radio(
        "Tone of Explanation",
        "Overrides the session tone for this turn",
        &[("Formal", "Use a formal and professional tone"), ("Playful", "Use a playful tone")],
        "Use a playful tone",
        "",
    )
    .unwrap()])
    .unwrap();
    let block = serialize_refinements(&static_preset(), &inline);
    println!("included: {:?}", block.included_labels);
    println!("shadowed: {:?}", block.dropped_session_labels);

    let history = vec![Exchange {
        user: "What is a monad?".into(),
        assistant: Some("A design pattern for sequencing computations.".into()),
    }];
    let prompt = assemble_chat_prompt(&history, "Give me an example in Rust.", &block).unwrap();
    println!("{}", prompt.system_text);
    for m in &prompt.messages {
        println!("[{:?}] {}", m.role, m.content);
    }
}
