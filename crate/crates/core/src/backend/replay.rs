use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use futures::StreamExt;

use super::{ChunkStream, CompletionBackend, CompletionRequest, Fixture, FixtureError, GatewayError, ScriptedCompletion};

/// Plays back a fixture. Completions are matched to requests by order only.
#[derive(Debug)]
pub struct ReplayBackend {
    fixture: Fixture,
    cursor: Mutex<usize>,
    default_delay: Duration,
}

impl ReplayBackend {
    pub fn new(fixture: Fixture) -> Self {
        ReplayBackend {
            fixture,
            cursor: Mutex::new(0),
            default_delay: Duration::ZERO,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, FixtureError> {
        Ok(Self::new(Fixture::load(path)?))
    }

    /// Delay before each chunk when the completion does not set its own.
    pub fn with_chunk_delay(mut self, delay: Duration) -> Self {
        self.default_delay = delay;
        self
    }

    pub fn next_completion(&self) -> Result<ScriptedCompletion, GatewayError> {
        let mut cursor = self.cursor.lock().expect("replay cursor poisoned");
        let completion = self
            .fixture
            .completions
            .get(*cursor)
            .cloned()
            .ok_or(GatewayError::FixtureExhausted)?;
        *cursor += 1;
        Ok(completion)
    }

    pub fn consumed(&self) -> usize {
        *self.cursor.lock().expect("replay cursor poisoned")
    }

    pub fn remaining(&self) -> usize {
        self.fixture.completions.len() - self.consumed()
    }
}

#[async_trait::async_trait]
impl CompletionBackend for ReplayBackend {
    async fn stream_completion(&self, _request: CompletionRequest) -> Result<ChunkStream, GatewayError> {
        let completion = self.next_completion()?;
        let delay = completion
            .chunk_delay_ms
            .map(Duration::from_millis)
            .unwrap_or(self.default_delay);
        let items = completion.outcomes();
        Ok(futures::stream::iter(items)
            .then(move |item| async move {
                if !delay.is_zero() {
                    tokio::time::sleep(delay).await;
                }
                item
            })
            .boxed())
    }
}
