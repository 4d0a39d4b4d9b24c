use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use futures::StreamExt;

use super::{ChunkStream, CompletionBackend, CompletionRequest, Fault, Fixture, GatewayError, ScriptedCompletion};

/// Forwards to `inner` and appends every completion to a fixture file.
///
/// Only completions are stored, never requests, so credentials and prompts
/// cannot end up in a fixture.
pub struct RecordingBackend<B> {
    inner: B,
    fixture: Arc<Mutex<Fixture>>,
    path: PathBuf,
}

impl<B: CompletionBackend> RecordingBackend<B> {
    pub fn new(inner: B, scenario: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        RecordingBackend {
            inner,
            fixture: Arc::new(Mutex::new(Fixture::new(scenario))),
            path: path.into(),
        }
    }

    pub fn fixture(&self) -> Fixture {
        self.fixture.lock().expect("fixture lock poisoned").clone()
    }
}

struct Tap {
    inner: ChunkStream,
    chunks: Vec<String>,
    fixture: Arc<Mutex<Fixture>>,
    path: PathBuf,
    done: bool,
}

impl Tap {
    fn finish(&mut self, fault: Option<Fault>) {
        self.done = true;
        let completion = ScriptedCompletion {
            chunks: std::mem::take(&mut self.chunks),
            fault,
            chunk_delay_ms: None,
        };
        let mut fixture = self.fixture.lock().expect("fixture lock poisoned");
        fixture.completions.push(completion);
        if let Err(e) = fixture.save(&self.path) {
            tracing::warn!(path = %self.path.display(), error = %e, "could not write fixture");
        }
    }
}

#[async_trait::async_trait]
impl<B: CompletionBackend> CompletionBackend for RecordingBackend<B> {
    async fn stream_completion(&self, request: CompletionRequest) -> Result<ChunkStream, GatewayError> {
        let inner = self.inner.stream_completion(request).await?;
        let tap = Tap {
            inner,
            chunks: Vec::new(),
            fixture: self.fixture.clone(),
            path: self.path.clone(),
            done: false,
        };
        Ok(futures::stream::unfold(tap, |mut tap| async move {
            if tap.done {
                return None;
            }
            match tap.inner.next().await {
                Some(Ok(chunk)) => {
                    tap.chunks.push(chunk.clone());
                    Some((Ok(chunk), tap))
                }
                Some(Err(e)) => {
                    let at_chunk = tap.chunks.len() + 1;
                    tap.finish(Some(Fault::Disconnect { at_chunk }));
                    Some((Err(e), tap))
                }
                None => {
                    tap.finish(None);
                    None
                }
            }
        })
        .boxed())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendConfig, ReplayBackend};

    #[tokio::test]
    async fn record_then_replay_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.json");
        let source = ReplayBackend::new(
            Fixture::new("src")
                .push(ScriptedCompletion::from_chunks(["[", "]"]))
                .push(ScriptedCompletion::from_chunks(["Hel", "lo"])),
        );
        let recorder = RecordingBackend::new(source, "rec", &path);
        let req = CompletionRequest::new(&BackendConfig::default(), "sk-secret-key".into(), vec![], 1);
        let mut first = Vec::new();
        for _ in 0..2 {
            let items: Vec<_> = recorder.stream_completion(req.clone()).await.unwrap().collect().await;
            first.push(items);
        }

        let on_disk = std::fs::read_to_string(&path).unwrap();
        assert!(!on_disk.contains("sk-secret-key"));

        let replay = ReplayBackend::from_file(&path).unwrap();
        for expected in first {
            let items: Vec<_> = replay.stream_completion(req.clone()).await.unwrap().collect().await;
            assert_eq!(items, expected);
        }
        assert_eq!(replay.remaining(), 0);
    }
}
