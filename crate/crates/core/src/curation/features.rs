use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::graph::{Connection, EntityId, EntityKind, MemoryGraph, PoolEntry};
use crate::text::{content_token_set, token_jaccard};
use crate::{Timestamp, SECONDS_PER_DAY};

use super::CurationError;

pub type NeighborKind = EntityKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub edge_weight: f64,
    pub recency_days: f64,
    pub co_interaction_count: u32,
    pub metadata_overlap_score: f64,
    pub memory_similarity_score: f64,
    pub neighbor_kind: NeighborKind,
}

/// Source of the two similarity features.
pub trait SimilarityProvider: Send + Sync {
    /// Both values in `[0, 1]`.
    fn similarities(&self, graph: &MemoryGraph, user: &EntityId, neighbor: &EntityId) -> (f64, f64);
}

/// Fixed `(metadata_overlap, memory_similarity)` for every neighbor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantSimilarity {
    pub metadata_overlap: f64,
    pub memory_similarity: f64,
}

impl Default for ConstantSimilarity {
    fn default() -> Self {
        Self { metadata_overlap: 0.5, memory_similarity: 0.5 }
    }
}

impl SimilarityProvider for ConstantSimilarity {
    fn similarities(&self, _: &MemoryGraph, _: &EntityId, _: &EntityId) -> (f64, f64) {
        (self.metadata_overlap.clamp(0.0, 1.0), self.memory_similarity.clamp(0.0, 1.0))
    }
}

/// Token Jaccard similarities. Metadata is the item title and description
/// (for a user, the titles of consumed items); the user side of the
/// metadata comparison is the union over their history.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TokenOverlapSimilarity;

fn metadata_tokens(graph: &MemoryGraph, entity: &EntityId) -> BTreeSet<String> {
    match entity.kind {
        EntityKind::Item => graph
            .node(entity)
            .map(|n| {
                let mut set = content_token_set(n.title.as_deref().unwrap_or_default());
                set.extend(content_token_set(&n.text));
                set
            })
            .unwrap_or_default(),
        EntityKind::User => graph
            .history_items(entity)
            .iter()
            .filter_map(|i| graph.node(i))
            .flat_map(|n| content_token_set(n.display_title()))
            .collect(),
    }
}

impl SimilarityProvider for TokenOverlapSimilarity {
    fn similarities(&self, graph: &MemoryGraph, user: &EntityId, neighbor: &EntityId) -> (f64, f64) {
        let mine: BTreeSet<String> = graph.history_items(user).iter().flat_map(|i| metadata_tokens(graph, i)).collect();
        let theirs = metadata_tokens(graph, neighbor);
        let union = mine.union(&theirs).count();
        let overlap = if union == 0 { 0.0 } else { mine.intersection(&theirs).count() as f64 / union as f64 };
        let memory = match (graph.node(user), graph.node(neighbor)) {
            (Some(a), Some(b)) => token_jaccard(&a.text, &b.text),
            _ => 0.0,
        };
        (overlap, memory)
    }
}

fn recency_days(now: Timestamp, connecting_ts: Timestamp) -> f64 {
    (now - connecting_ts).max(0) as f64 / SECONDS_PER_DAY
}

/// Features for a pool entry already computed by [`MemoryGraph::pool_entries`].
pub(crate) fn features_for_entry(
    graph: &MemoryGraph,
    user: &EntityId,
    entry: &PoolEntry,
    now: Timestamp,
    similarity: &dyn SimilarityProvider,
) -> FeatureVector {
    let neighbor = &entry.entity;
    let max_weight = |edges: &mut dyn Iterator<Item = f64>| edges.fold(0.0f64, f64::max);
    let (edge_weight, co_interaction_count) = match entry.connection {
        Connection::Direct => {
            let w = max_weight(&mut graph.edges_of_user(user).filter(|e| &e.item == neighbor).map(|e| e.weight));
            (w, graph.co_consumers(user, neighbor).len())
        }
        Connection::CoUser => {
            let mine = graph.history_items(user);
            let shared = graph.history_items(neighbor).intersection(&mine).count();
            (1.0, shared)
        }
        Connection::CoUserItem => {
            let co = graph.co_consumers(user, neighbor);
            let w = max_weight(&mut graph.edges_of_item(neighbor).filter(|e| co.contains(&e.user)).map(|e| e.weight));
            (w, co.len())
        }
    };
    let (overlap, memory) = similarity.similarities(graph, user, neighbor);
    FeatureVector {
        edge_weight,
        recency_days: recency_days(now, entry.connecting_ts),
        co_interaction_count: co_interaction_count as u32,
        metadata_overlap_score: overlap.clamp(0.0, 1.0),
        memory_similarity_score: memory.clamp(0.0, 1.0),
        neighbor_kind: neighbor.kind,
    }
}

pub fn compute_features(
    graph: &MemoryGraph,
    user: &EntityId,
    neighbor: &EntityId,
    now: Timestamp,
    similarity: &dyn SimilarityProvider,
) -> Result<FeatureVector, CurationError> {
    let entry = graph
        .pool_entries(user)?
        .into_iter()
        .find(|e| &e.entity == neighbor)
        .ok_or_else(|| CurationError::NotANeighbor { user: user.clone(), neighbor: neighbor.clone() })?;
    Ok(features_for_entry(graph, user, &entry, now, similarity))
}
