use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use futures::StreamExt;
use tokio::sync::{mpsc, oneshot};
use tokio::task::AbortHandle;

use super::log::EventLog;
use crate::backend::{CompletionBackend, CompletionRequest, GatewayError};
use crate::engine::{Command, CommandReply, Effect, SessionMachine};
use crate::events::EventKind;
use crate::session::{SessionError, SessionState};
use crate::store::DirStore;

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub state: SessionState,
    pub busy: bool,
    pub quiescent: bool,
}

pub(crate) enum Msg {
    Command(Command, oneshot::Sender<Result<CommandReply, SessionError>>),
    Snapshot(oneshot::Sender<Snapshot>),
    Chunk(u64, String),
    Finished(u64, Result<(), GatewayError>),
    Timer(u64),
    Opened(u64, AbortHandle),
}

/// Cheap handle to one running session.
#[derive(Clone)]
pub struct SessionHandle {
    tx: mpsc::UnboundedSender<Msg>,
    pub log: Arc<EventLog>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("session task has stopped")]
pub struct ActorGone;

impl SessionHandle {
    pub async fn command(&self, command: Command) -> Result<Result<CommandReply, SessionError>, ActorGone> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(Msg::Command(command, reply)).map_err(|_| ActorGone)?;
        rx.await.map_err(|_| ActorGone)
    }

    pub async fn snapshot(&self) -> Result<Snapshot, ActorGone> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(Msg::Snapshot(reply)).map_err(|_| ActorGone)?;
        rx.await.map_err(|_| ActorGone)
    }
}

/// Starts the task that owns `machine`. All mutations of the session go
/// through its queue, one at a time.
pub fn spawn_session(
    machine: SessionMachine,
    backend: Arc<dyn CompletionBackend>,
    store: Option<DirStore>,
    ring_capacity: usize,
) -> SessionHandle {
    let (tx, rx) = mpsc::unbounded_channel();
    let log = Arc::new(EventLog::new(ring_capacity));
    let (open_tx, open_rx) = mpsc::unbounded_channel();
    tokio::spawn(opener(backend, open_rx, tx.clone()));
    let actor = Actor {
        machine,
        log: log.clone(),
        store,
        tx: tx.clone(),
        opener: open_tx,
        running: HashMap::new(),
        cancelled: Default::default(),
    };
    tokio::spawn(actor.run(rx));
    SessionHandle { tx, log }
}

/// Opens backend streams strictly in the order the session asked for them,
/// so order-matched fixtures line up with calls.
async fn opener(
    backend: Arc<dyn CompletionBackend>,
    mut requests: mpsc::UnboundedReceiver<(u64, CompletionRequest)>,
    tx: mpsc::UnboundedSender<Msg>,
) {
    while let Some((call, request)) = requests.recv().await {
        let opened = backend.stream_completion(request).await;
        let tx2 = tx.clone();
        let task = tokio::spawn(async move {
            let mut stream = match opened {
                Ok(s) => s,
                Err(e) => {
                    let _ = tx2.send(Msg::Finished(call, Err(e)));
                    return;
                }
            };
            while let Some(item) = stream.next().await {
                match item {
                    Ok(chunk) => {
                        if tx2.send(Msg::Chunk(call, chunk)).is_err() {
                            return;
                        }
                    }
                    Err(e) => {
                        let _ = tx2.send(Msg::Finished(call, Err(e)));
                        return;
                    }
                }
            }
            let _ = tx2.send(Msg::Finished(call, Ok(())));
        });
        if tx.send(Msg::Opened(call, task.abort_handle())).is_err() {
            task.abort();
            return;
        }
    }
}

struct Actor {
    machine: SessionMachine,
    log: Arc<EventLog>,
    store: Option<DirStore>,
    tx: mpsc::UnboundedSender<Msg>,
    opener: mpsc::UnboundedSender<(u64, CompletionRequest)>,
    running: HashMap<u64, AbortHandle>,
    cancelled: std::collections::HashSet<u64>,
}

impl Actor {
    async fn run(mut self, mut rx: mpsc::UnboundedReceiver<Msg>) {
        self.apply_effects();
        while let Some(msg) = rx.recv().await {
            match msg {
                Msg::Command(command, reply) => {
                    let _ = reply.send(self.machine.command(command));
                }
                Msg::Snapshot(reply) => {
                    let _ = reply.send(Snapshot {
                        state: self.machine.state().clone(),
                        busy: self.machine.is_busy(),
                        quiescent: self.machine.is_quiescent(),
                    });
                }
                Msg::Chunk(call, text) => self.machine.on_chunk(call, &text),
                Msg::Finished(call, result) => {
                    self.running.remove(&call);
                    self.machine.on_call_finished(call, result);
                }
                Msg::Timer(timer) => self.machine.on_timer(timer),
                Msg::Opened(call, handle) => {
                    if self.cancelled.remove(&call) {
                        handle.abort();
                    } else if !handle.is_finished() {
                        self.running.insert(call, handle);
                    }
                }
            }
            self.apply_effects();
        }
        for handle in self.running.values() {
            handle.abort();
        }
    }

    fn apply_effects(&mut self) {
        let mut dirty = false;
        for effect in self.machine.take_effects() {
            match effect {
                Effect::StartCall { call, request, .. } => {
                    let _ = self.opener.send((call, request));
                }
                Effect::CancelCall { call } => match self.running.remove(&call) {
                    Some(handle) => handle.abort(),
                    None => {
                        self.cancelled.insert(call);
                    }
                },
                Effect::ArmTimer { timer, after_ms } => {
                    let tx = self.tx.clone();
                    tokio::spawn(async move {
                        tokio::time::sleep(Duration::from_millis(after_ms)).await;
                        let _ = tx.send(Msg::Timer(timer));
                    });
                }
                Effect::Emit(event) => {
                    dirty |= !matches!(event.kind, EventKind::ChatDelta | EventKind::OptionDelta);
                    self.log.push(event);
                }
            }
        }
        if dirty {
            if let Some(store) = &self.store {
                if let Err(e) = store.persist(self.machine.state()) {
                    tracing::warn!(session = %self.machine.state().id, error = %e, "could not persist session");
                }
            }
        }
    }
}
