//! Directory-backed session persistence.
//!
//! One file per session, `<id>.json`, holding the canonical JSON of the
//! [`SessionState`] and a SHA-256 checksum of it. Writes go to a temporary
//! file that is then renamed over the target.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::session::SessionState;

const RECORD_FORMAT: &str = "prc-session";
const RECORD_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error("session record `{id}` is corrupt: {detail}")]
    CorruptRecord { id: String, detail: String },
    #[error("invalid session id `{0}`")]
    InvalidId(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Serialize, Deserialize)]
struct Record {
    format: String,
    version: u32,
    checksum: String,
    state: serde_json::Value,
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("record");
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn checksum(canonical: &str) -> String {
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Canonical compact JSON of a session state.
pub fn canonical_state(state: &SessionState) -> String {
    serde_json::to_string(state).expect("session state serializes")
}

#[derive(Debug, Clone)]
pub struct DirStore {
    dir: PathBuf,
}

impl DirStore {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(DirStore { dir })
    }

    fn path_for(&self, id: &str) -> Result<PathBuf, StoreError> {
        let ok = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !ok {
            return Err(StoreError::InvalidId(id.to_string()));
        }
        Ok(self.dir.join(format!("{id}.json")))
    }

    pub fn persist(&self, state: &SessionState) -> Result<(), StoreError> {
        let path = self.path_for(&state.id)?;
        let canonical = canonical_state(state);
        let record = Record {
            format: RECORD_FORMAT.into(),
            version: RECORD_VERSION,
            checksum: checksum(&canonical),
            state: serde_json::from_str(&canonical).expect("canonical state is JSON"),
        };
        let mut text = serde_json::to_string_pretty(&record).expect("record serializes");
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(())
    }

    /// Loads a session; turns that were still generating come back errored
    /// with reason "interrupted".
    pub fn load(&self, id: &str) -> Result<SessionState, StoreError> {
        let path = self.path_for(id)?;
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(id.to_string())),
            Err(e) => return Err(e.into()),
        };
        let corrupt = |detail: String| StoreError::CorruptRecord {
            id: id.to_string(),
            detail,
        };
        let record: Record = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
        if record.format != RECORD_FORMAT || record.version != RECORD_VERSION {
            return Err(corrupt(format!("unsupported format {} v{}", record.format, record.version)));
        }
        let canonical = serde_json::to_string(&record.state).expect("value serializes");
        if checksum(&canonical) != record.checksum {
            return Err(corrupt("checksum mismatch".into()));
        }
        let mut state: SessionState = serde_json::from_value(record.state).map_err(|e| corrupt(e.to_string()))?;
        state.collapse_in_flight();
        Ok(state)
    }

    pub fn exists(&self, id: &str) -> bool {
        self.path_for(id).map(|p| p.exists()).unwrap_or(false)
    }
}
