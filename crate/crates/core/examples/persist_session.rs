//! Saves a session to a directory store, reloads it, and exports its
//! session options for sharing.

use prc_core::session::{Mode, SessionState};
use prc_core::store::DirStore;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("prc-persist-example");
    let store = DirStore::open(&dir)?;

    let mut state = SessionState::new("example", Mode::Static);
    state.update_session_option("Tone of Explanation", "Use an encouraging and positive tone".into())?;
    store.persist(&state)?;

    let back = store.load("example")?;
    assert_eq!(back, state);
    println!("stored under {}", dir.display());
    println!("{}", back.export_session_options());
    Ok(())
}
