use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::GatewayError;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("reading fixture {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("fixture {path} is not valid: {source}")]
    Format {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// A scripted failure inside one completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fault {
    /// The connection drops when chunk `at_chunk` (1-based) would be sent.
    Disconnect { at_chunk: usize },
    /// Chunk `at_chunk` (1-based) arrives as an unparseable provider payload.
    Malformed { at_chunk: usize },
}

/// One scripted completion: its chunks plus an optional fault.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "CompletionSpec")]
pub struct ScriptedCompletion {
    pub chunks: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<Fault>,
    /// Virtual delay before each chunk; falls back to the driver's default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_delay_ms: Option<u64>,
}

/// On-disk form: either explicit `chunks`, or `text` split every
/// `chunk_size` characters.
#[derive(Deserialize)]
struct CompletionSpec {
    #[serde(default)]
    chunks: Option<Vec<String>>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    chunk_size: Option<usize>,
    #[serde(default)]
    fault: Option<Fault>,
    #[serde(default)]
    chunk_delay_ms: Option<u64>,
}

impl From<CompletionSpec> for ScriptedCompletion {
    fn from(spec: CompletionSpec) -> Self {
        let chunks = match (spec.chunks, spec.text) {
            (Some(c), _) => c,
            (None, Some(t)) => split_chars(&t, spec.chunk_size.unwrap_or(16)),
            (None, None) => Vec::new(),
        };
        ScriptedCompletion {
            chunks,
            fault: spec.fault,
            chunk_delay_ms: spec.chunk_delay_ms,
        }
    }
}

fn split_chars(text: &str, size: usize) -> Vec<String> {
    let size = size.max(1);
    let chars: Vec<char> = text.chars().collect();
    chars.chunks(size).map(|c| c.iter().collect()).collect()
}

impl ScriptedCompletion {
    pub fn from_chunks<I, S>(chunks: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedCompletion {
            chunks: chunks.into_iter().map(Into::into).collect(),
            fault: None,
            chunk_delay_ms: None,
        }
    }

    pub fn from_text(text: &str, chunk_size: usize) -> Self {
        ScriptedCompletion {
            chunks: split_chars(text, chunk_size),
            fault: None,
            chunk_delay_ms: None,
        }
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = Some(fault);
        self
    }

    pub fn text(&self) -> String {
        self.chunks.concat()
    }

    /// What a consumer observes, item by item. A fault truncates the chunk
    /// list and ends with its error.
    pub fn outcomes(&self) -> Vec<Result<String, GatewayError>> {
        let (cut, error) = match &self.fault {
            None => (self.chunks.len(), None),
            Some(Fault::Disconnect { at_chunk }) => (
                at_chunk.saturating_sub(1).min(self.chunks.len()),
                Some(GatewayError::Transport {
                    status: None,
                    detail: format!("connection closed at chunk {at_chunk}"),
                }),
            ),
            Some(Fault::Malformed { at_chunk }) => (
                at_chunk.saturating_sub(1).min(self.chunks.len()),
                Some(GatewayError::FaultInjected("malformed_payload".into())),
            ),
        };
        let mut out: Vec<Result<String, GatewayError>> = self.chunks[..cut].iter().cloned().map(Ok).collect();
        out.extend(error.map(Err));
        out
    }
}

/// Scripted completions for one scenario, consumed strictly in order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fixture {
    pub scenario: String,
    pub completions: Vec<ScriptedCompletion>,
}

impl Fixture {
    pub fn new(scenario: impl Into<String>) -> Self {
        Fixture {
            scenario: scenario.into(),
            completions: Vec::new(),
        }
    }

    pub fn push(mut self, completion: ScriptedCompletion) -> Self {
        self.completions.push(completion);
        self
    }

    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let text = std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| FixtureError::Format {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("fixture serializes");
        s.push('\n');
        s
    }

    /// Writes via a temporary file and rename.
    pub fn save(&self, path: &Path) -> io::Result<()> {
        crate::store::write_atomic(path, self.to_json().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disconnect_at_chunk_two_yields_one_chunk() {
        let c = ScriptedCompletion::from_chunks(["a", "b", "c"]).with_fault(Fault::Disconnect { at_chunk: 2 });
        let out = c.outcomes();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0], Ok("a".to_string()));
        assert!(matches!(out[1], Err(GatewayError::Transport { .. })));
    }

    #[test]
    fn text_form_splits_on_char_boundaries() {
        let f: Fixture = serde_json::from_str(
            r#"{"scenario": "x", "completions": [{"text": "héllo wörld", "chunk_size": 3}]}"#,
        )
        .unwrap();
        assert_eq!(f.completions[0].chunks, vec!["hél", "lo ", "wör", "ld"]);
        assert_eq!(f.completions[0].text(), "héllo wörld");
    }

    #[test]
    fn json_form_round_trips() {
        let f = Fixture::new("s")
            .push(ScriptedCompletion::from_chunks(["x"]))
            .push(ScriptedCompletion::from_chunks(["y"]).with_fault(Fault::Malformed { at_chunk: 1 }));
        let back: Fixture = serde_json::from_str(&f.to_json()).unwrap();
        assert_eq!(back, f);
    }
}
