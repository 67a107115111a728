use std::sync::Arc;

use parking_lot::{RwLock, RwLockReadGuard, RwLockWriteGuard};

use super::{EntityId, MemoryGraph, NodeMemory, Result};

/// A [`MemoryGraph`] shared between the online read path and the
/// propagation worker. Readers never observe a partially written memory: a
/// text replacement happens entirely under the write lock.
#[derive(Debug, Clone, Default)]
pub struct SharedGraph {
    inner: Arc<RwLock<MemoryGraph>>,
}

impl SharedGraph {
    pub fn new(graph: MemoryGraph) -> Self {
        Self { inner: Arc::new(RwLock::new(graph)) }
    }

    pub fn read(&self) -> RwLockReadGuard<'_, MemoryGraph> {
        self.inner.read()
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, MemoryGraph> {
        self.inner.write()
    }

    pub fn apply_memory_update(&self, entity: &EntityId, new_text: &str, expected_version: u64) -> Result<NodeMemory> {
        self.inner.write().apply_memory_update(entity, new_text, expected_version)
    }

    /// Copy of a node as currently stored.
    pub fn node(&self, entity: &EntityId) -> Option<NodeMemory> {
        self.inner.read().node(entity).cloned()
    }

    pub fn snapshot_clone(&self) -> MemoryGraph {
        self.inner.read().clone()
    }
}
