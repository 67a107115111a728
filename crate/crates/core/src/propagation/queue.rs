use std::collections::VecDeque;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

use crate::config::PropagationMode;
use crate::gateway::{CallKind, Gateway};
use crate::graph::{GraphError, SharedGraph};

use super::{run_propagation, InteractionEvent, MemoryView, PropagationError, PropagationResult};

/// Follow-up attempts per event after the first one.
pub const MAX_RETRIES: u32 = 2;

/// FIFO of pending events. Producers never touch the gateway.
#[derive(Debug, Default)]
pub struct UpdateQueue {
    pending: Mutex<VecDeque<InteractionEvent>>,
    ready: Condvar,
    /// Signalled when the queue becomes empty and nothing is in flight.
    idle: Condvar,
    in_flight: AtomicBool,
    enqueued: AtomicU64,
    applied: AtomicU64,
    failed: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrainStats {
    pub applied: u64,
    pub failed: u64,
}

impl UpdateQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn enqueue(&self, event: InteractionEvent) {
        self.pending.lock().push_back(event);
        self.enqueued.fetch_add(1, Ordering::SeqCst);
        self.ready.notify_one();
    }

    pub fn len(&self) -> usize {
        self.pending.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn enqueued(&self) -> u64 {
        self.enqueued.load(Ordering::SeqCst)
    }

    pub fn applied(&self) -> u64 {
        self.applied.load(Ordering::SeqCst)
    }

    pub fn failed(&self) -> u64 {
        self.failed.load(Ordering::SeqCst)
    }

    fn pop(&self) -> Option<InteractionEvent> {
        let mut pending = self.pending.lock();
        let event = pending.pop_front();
        self.in_flight.store(event.is_some(), Ordering::SeqCst);
        if event.is_none() {
            self.idle.notify_all();
        }
        event
    }

    fn finish(&self, ok: bool) {
        if ok {
            self.applied.fetch_add(1, Ordering::SeqCst);
        } else {
            self.failed.fetch_add(1, Ordering::SeqCst);
        }
        let pending = self.pending.lock();
        self.in_flight.store(false, Ordering::SeqCst);
        if pending.is_empty() {
            self.idle.notify_all();
        }
    }

    /// Blocks until the queue is empty and no event is being processed.
    pub fn wait_idle(&self) {
        let mut pending = self.pending.lock();
        while !pending.is_empty() || self.in_flight.load(Ordering::SeqCst) {
            self.idle.wait(&mut pending);
        }
    }
}

/// Failed event record, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadLetter {
    pub event: InteractionEvent,
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub raw: Option<String>,
    pub attempts: u32,
}

impl DeadLetter {
    pub fn read_all(path: impl AsRef<Path>) -> std::io::Result<Vec<DeadLetter>> {
        let file = std::fs::File::open(path)?;
        let mut out = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(&line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", idx + 1)))?;
            out.push(record);
        }
        Ok(out)
    }
}

/// Applies queued events to a shared graph.
#[derive(Debug, Clone)]
pub struct Worker {
    graph: SharedGraph,
    gateway: Gateway,
    mode: PropagationMode,
    dead_letter: Option<PathBuf>,
}

enum Outcome {
    Applied,
    Stale,
}

impl Worker {
    pub fn new(graph: SharedGraph, gateway: Gateway) -> Self {
        Self { graph, gateway, mode: PropagationMode::Batched, dead_letter: None }
    }

    pub fn with_mode(mut self, mode: PropagationMode) -> Self {
        self.mode = mode;
        self
    }

    /// Appends failed events to `path` as JSON lines.
    pub fn with_dead_letter(mut self, path: impl Into<PathBuf>) -> Self {
        self.dead_letter = Some(path.into());
        self
    }

    pub fn graph(&self) -> &SharedGraph {
        &self.graph
    }

    /// Processes events until the queue is empty.
    pub fn drain(&self, queue: &UpdateQueue) -> DrainStats {
        let mut stats = DrainStats::default();
        while let Some(event) = queue.pop() {
            let ok = self.process(&event);
            if ok {
                stats.applied += 1;
            } else {
                stats.failed += 1;
            }
            queue.finish(ok);
        }
        stats
    }

    /// Runs one event to completion: the first attempt plus up to
    /// [`MAX_RETRIES`] follow-ups for failed calls or stale user/item
    /// versions. Returns whether the event was applied.
    pub fn process(&self, event: &InteractionEvent) -> bool {
        let mut kind = CallKind::Primary;
        let mut attempts = 0;
        let last_error = loop {
            attempts += 1;
            let error = match self.attempt(event, kind) {
                Ok(Outcome::Applied) => return true,
                Ok(Outcome::Stale) => {
                    log::debug!("stale user/item version for {} -> {}; re-running", event.user, event.item);
                    None
                }
                Err(e) => {
                    log::warn!("propagation for {} -> {} failed: {e}", event.user, event.item);
                    Some(e)
                }
            };
            if attempts > MAX_RETRIES {
                break error;
            }
            kind = CallKind::Retry;
        };
        let (error, raw) = match &last_error {
            Some(e) => (e.to_string(), e.raw_text().map(str::to_string)),
            None => ("user or item version kept changing".to_string(), None),
        };
        self.write_dead_letter(DeadLetter { event: event.clone(), error, raw, attempts });
        false
    }

    fn attempt(&self, event: &InteractionEvent, kind: CallKind) -> Result<Outcome, PropagationError> {
        let view = MemoryView::read(&self.graph.read(), event)?;
        let result = run_propagation(self.mode, event, &view, &self.gateway, kind)?;
        self.apply(event, &view, &result)
    }

    fn apply(
        &self,
        event: &InteractionEvent,
        view: &MemoryView,
        result: &PropagationResult,
    ) -> Result<Outcome, PropagationError> {
        let mut graph = self.graph.write();
        let user_now = graph.require(&event.user)?.version;
        let item_now = graph.require(&event.item)?.version;
        if user_now != view.user_version || item_now != view.item_version {
            return Ok(Outcome::Stale);
        }
        graph.apply_memory_update(&event.user, &result.user_memory, view.user_version)?;
        graph.apply_memory_update(&event.item, &result.item_memory, view.item_version)?;
        for update in &result.neighbor_updates {
            let seen = view.neighbors.iter().find(|(id, _, _)| *id == update.neighbor).map_or(0, |(_, _, v)| *v);
            match graph.apply_memory_update(&update.neighbor, &update.memory_update, seen) {
                Ok(_) => {}
                Err(GraphError::StaleWrite { actual, .. }) => {
                    log::debug!("neighbor {} moved to version {actual}; reapplying", update.neighbor);
                    graph.apply_memory_update(&update.neighbor, &update.memory_update, actual)?;
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(Outcome::Applied)
    }

    fn write_dead_letter(&self, record: DeadLetter) {
        let Some(path) = &self.dead_letter else { return };
        let line = serde_json::to_string(&record).expect("dead letter serializes");
        let written = OpenOptions::new().create(true).append(true).open(path).and_then(|mut f| writeln!(f, "{line}"));
        if let Err(e) = written {
            log::error!("cannot write dead letter to {}: {e}", path.display());
        }
    }

    /// Moves the worker onto a thread that drains `queue` as events arrive.
    pub fn spawn(self, queue: Arc<UpdateQueue>) -> BackgroundWorker {
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let queue = Arc::clone(&queue);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || loop {
                self.drain(&queue);
                let mut pending = queue.pending.lock();
                if stop.load(Ordering::SeqCst) && pending.is_empty() {
                    break;
                }
                if pending.is_empty() {
                    queue.ready.wait(&mut pending);
                }
            })
        };
        BackgroundWorker { queue, stop, handle: Some(handle) }
    }
}

/// Handle to a draining thread; stops after the queue empties on drop.
#[derive(Debug)]
pub struct BackgroundWorker {
    queue: Arc<UpdateQueue>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl BackgroundWorker {
    pub fn queue(&self) -> &Arc<UpdateQueue> {
        &self.queue
    }

    /// Drains what is pending, then stops the thread.
    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        if let Some(handle) = self.handle.take() {
            {
                let _pending = self.queue.pending.lock();
                self.stop.store(true, Ordering::SeqCst);
                self.queue.ready.notify_all();
            }
            if handle.join().is_err() {
                log::error!("propagation worker panicked");
            }
        }
    }
}

impl Drop for BackgroundWorker {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}
