//! Versioned bipartite memory graph.
//!
//! Every user and item node carries a natural-language memory text and a
//! version counter. Writes go through [`MemoryGraph::apply_memory_update`],
//! which accepts a new text only when the caller names the version it read.
//! Interaction edges are append-only; repeat interactions are kept as
//! distinct edges.

mod shared;
mod snapshot;

pub use shared::SharedGraph;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Timestamp;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid entity: {0}")]
    InvalidEntity(String),
    #[error("unknown entity {0}")]
    UnknownEntity(EntityId),
    #[error("stale write to {entity}: expected version {expected}, stored version is {actual}")]
    StaleWrite { entity: EntityId, expected: u64, actual: u64 },
    #[error("invalid interaction edge: {0}")]
    InvalidEdge(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("snapshot parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityKind {
    User,
    Item,
}

impl EntityKind {
    fn prefix(self) -> &'static str {
        match self {
            EntityKind::User => "User",
            EntityKind::Item => "Item",
        }
    }
}

/// A user or item identifier. Displays (and serializes) as `User-<id>` or
/// `Item-<id>`, the form used inside prompts.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId {
    pub kind: EntityKind,
    pub id: String,
}

impl EntityId {
    pub fn new(kind: EntityKind, id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(GraphError::InvalidEntity(format!("{} with empty id", kind.prefix())));
        }
        if id.trim() != id || id.contains(['\n', '\r']) {
            return Err(GraphError::InvalidEntity(format!("id {id:?} has surrounding whitespace or line breaks")));
        }
        Ok(Self { kind, id })
    }

    pub fn user(id: impl Into<String>) -> Result<Self> {
        Self::new(EntityKind::User, id)
    }

    pub fn item(id: impl Into<String>) -> Result<Self> {
        Self::new(EntityKind::Item, id)
    }

    pub fn is_user(&self) -> bool {
        self.kind == EntityKind::User
    }

    pub fn is_item(&self) -> bool {
        self.kind == EntityKind::Item
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.kind.prefix(), self.id)
    }
}

impl FromStr for EntityId {
    type Err = GraphError;

    /// Accepts `User-<id>` / `Item-<id>` (prefix case-insensitive, `-`, `_`,
    /// `:` or a space as separator).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        for kind in [EntityKind::User, EntityKind::Item] {
            let prefix = kind.prefix();
            if s.len() > prefix.len() && s[..prefix.len()].eq_ignore_ascii_case(prefix) {
                let rest = &s[prefix.len()..];
                if let Some(id) = rest.strip_prefix(['-', '_', ':', ' ']) {
                    return EntityId::new(kind, id.trim());
                }
            }
        }
        Err(GraphError::InvalidEntity(format!("cannot parse entity id {s:?}")))
    }
}

impl Serialize for EntityId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EntityId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMemory {
    pub entity: EntityId,
    /// Display title (items only; users have none).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub text: String,
    pub version: u64,
    /// Logical clock value of the last accepted write.
    pub updated_at: u64,
}

impl NodeMemory {
    pub fn display_title(&self) -> &str {
        self.title.as_deref().unwrap_or(&self.entity.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEdge {
    pub user: EntityId,
    pub item: EntityId,
    pub weight: f64,
    pub timestamp: Timestamp,
}

impl InteractionEdge {
    pub fn new(user: EntityId, item: EntityId, weight: f64, timestamp: Timestamp) -> Self {
        Self { user, item, weight, timestamp }
    }

    fn validate(&self) -> Result<()> {
        if !self.user.is_user() {
            return Err(GraphError::InvalidEdge(format!("{} is not a user", self.user)));
        }
        if !self.item.is_item() {
            return Err(GraphError::InvalidEdge(format!("{} is not an item", self.item)));
        }
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(GraphError::InvalidEdge(format!("weight {} must be a non-negative real", self.weight)));
        }
        if self.timestamp < 0 {
            return Err(GraphError::InvalidEdge(format!("timestamp {} is negative", self.timestamp)));
        }
        Ok(())
    }
}

/// Short preview of a superseded memory version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionHead {
    pub version: u64,
    pub updated_at: u64,
    pub head: String,
}

const HEAD_CHARS: usize = 80;

/// How a pool member connects to the anchor user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connection {
    /// Item in the user's own history.
    Direct,
    /// User sharing at least one item.
    CoUser,
    /// Item consumed by a co-user but not by the anchor user.
    CoUserItem,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub entity: EntityId,
    pub connection: Connection,
    /// Most recent timestamp on an edge that links this member to the user.
    pub connecting_ts: Timestamp,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryGraph {
    nodes: BTreeMap<EntityId, NodeMemory>,
    edges: Vec<InteractionEdge>,
    history: BTreeMap<EntityId, Vec<VersionHead>>,
    clock: u64,
    user_index: BTreeMap<EntityId, Vec<usize>>,
    item_index: BTreeMap<EntityId, Vec<usize>>,
}

impl MemoryGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a node at version 0, or returns the existing node untouched.
    pub fn upsert_node(&mut self, entity: EntityId, initial_text: &str) -> Result<NodeMemory> {
        self.upsert_titled(entity, None, initial_text)
    }

    /// Like [`upsert_node`](Self::upsert_node) with an item title.
    pub fn upsert_item(&mut self, item: EntityId, title: &str, description: &str) -> Result<NodeMemory> {
        if !item.is_item() {
            return Err(GraphError::InvalidEntity(format!("{item} is not an item")));
        }
        let title = (!title.trim().is_empty()).then(|| title.to_string());
        self.upsert_titled(item, title, description)
    }

    fn upsert_titled(&mut self, entity: EntityId, title: Option<String>, text: &str) -> Result<NodeMemory> {
        if entity.id.trim().is_empty() {
            return Err(GraphError::InvalidEntity("empty id".into()));
        }
        let node = self.nodes.entry(entity.clone()).or_insert_with(|| NodeMemory {
            entity,
            title,
            text: text.to_string(),
            version: 0,
            updated_at: 0,
        });
        Ok(node.clone())
    }

    pub fn record_interaction(&mut self, edge: InteractionEdge) -> Result<()> {
        edge.validate()?;
        for endpoint in [&edge.user, &edge.item] {
            if !self.nodes.contains_key(endpoint) {
                return Err(GraphError::UnknownEntity(endpoint.clone()));
            }
        }
        let idx = self.edges.len();
        self.user_index.entry(edge.user.clone()).or_default().push(idx);
        self.item_index.entry(edge.item.clone()).or_default().push(idx);
        self.edges.push(edge);
        Ok(())
    }

    /// Replaces the memory text if `expected_version` matches the stored one.
    pub fn apply_memory_update(
        &mut self,
        entity: &EntityId,
        new_text: &str,
        expected_version: u64,
    ) -> Result<NodeMemory> {
        let node = self.nodes.get_mut(entity).ok_or_else(|| GraphError::UnknownEntity(entity.clone()))?;
        if node.version != expected_version {
            return Err(GraphError::StaleWrite {
                entity: entity.clone(),
                expected: expected_version,
                actual: node.version,
            });
        }
        self.clock += 1;
        self.history.entry(entity.clone()).or_default().push(VersionHead {
            version: node.version,
            updated_at: node.updated_at,
            head: node.text.chars().take(HEAD_CHARS).collect(),
        });
        node.text = new_text.to_string();
        node.version += 1;
        node.updated_at = self.clock;
        Ok(node.clone())
    }

    pub fn node(&self, entity: &EntityId) -> Option<&NodeMemory> {
        self.nodes.get(entity)
    }

    pub fn require(&self, entity: &EntityId) -> Result<&NodeMemory> {
        self.nodes.get(entity).ok_or_else(|| GraphError::UnknownEntity(entity.clone()))
    }

    pub fn contains(&self, entity: &EntityId) -> bool {
        self.nodes.contains_key(entity)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeMemory> {
        self.nodes.values()
    }

    pub fn edges(&self) -> &[InteractionEdge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn users(&self) -> impl Iterator<Item = &EntityId> {
        self.nodes.keys().filter(|e| e.is_user())
    }

    pub fn items(&self) -> impl Iterator<Item = &EntityId> {
        self.nodes.keys().filter(|e| e.is_item())
    }

    /// Superseded versions of a node, oldest first.
    pub fn history(&self, entity: &EntityId) -> &[VersionHead] {
        self.history.get(entity).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn latest_timestamp(&self) -> Option<Timestamp> {
        self.edges.iter().map(|e| e.timestamp).max()
    }

    pub fn edges_of_user<'a>(&'a self, user: &EntityId) -> impl Iterator<Item = &'a InteractionEdge> + 'a {
        self.user_index.get(user).into_iter().flatten().map(move |&i| &self.edges[i])
    }

    pub fn edges_of_item<'a>(&'a self, item: &EntityId) -> impl Iterator<Item = &'a InteractionEdge> + 'a {
        self.item_index.get(item).into_iter().flatten().map(move |&i| &self.edges[i])
    }

    /// Distinct items in the user's history.
    pub fn history_items(&self, user: &EntityId) -> BTreeSet<EntityId> {
        self.edges_of_user(user).map(|e| e.item.clone()).collect()
    }

    /// Titles of the user's `n` most recently consumed distinct items, most
    /// recent first. Equal timestamps resolve by later edge first.
    pub fn recent_item_titles(&self, user: &EntityId, n: usize) -> Vec<String> {
        let mut edges: Vec<(usize, &InteractionEdge)> =
            self.user_index.get(user).into_iter().flatten().map(|&i| (i, &self.edges[i])).collect();
        edges.sort_by(|a, b| b.1.timestamp.cmp(&a.1.timestamp).then(b.0.cmp(&a.0)));
        let mut seen = BTreeSet::new();
        let mut titles = Vec::new();
        for (_, edge) in edges {
            if titles.len() == n {
                break;
            }
            if seen.insert(edge.item.clone()) {
                let title = self
                    .nodes
                    .get(&edge.item)
                    .map(|n| n.display_title().to_string())
                    .unwrap_or_else(|| edge.item.id.clone());
                titles.push(title);
            }
        }
        titles
    }

    /// Structural neighborhood of `user` with connection metadata, ordered
    /// by most recent connecting timestamp, ties by ascending id. Includes
    /// history items, co-users and the co-users' other items.
    pub fn pool_entries(&self, user: &EntityId) -> Result<Vec<PoolEntry>> {
        let node = self.require(user)?;
        if !node.entity.is_user() {
            return Err(GraphError::InvalidEntity(format!("{user} is not a user")));
        }
        let mut members: BTreeMap<EntityId, (Connection, Timestamp)> = BTreeMap::new();
        let mut bump = |entity: &EntityId, connection: Connection, ts: Timestamp| {
            members.entry(entity.clone()).and_modify(|slot| slot.1 = slot.1.max(ts)).or_insert((connection, ts));
        };

        let history = self.history_items(user);
        for edge in self.edges_of_user(user) {
            bump(&edge.item, Connection::Direct, edge.timestamp);
        }
        let mut co_users = BTreeSet::new();
        for item in &history {
            for edge in self.edges_of_item(item) {
                if &edge.user != user {
                    bump(&edge.user, Connection::CoUser, edge.timestamp);
                    co_users.insert(edge.user.clone());
                }
            }
        }
        for co_user in &co_users {
            for edge in self.edges_of_user(co_user) {
                if !history.contains(&edge.item) {
                    bump(&edge.item, Connection::CoUserItem, edge.timestamp);
                }
            }
        }

        let mut entries: Vec<PoolEntry> = members
            .into_iter()
            .map(|(entity, (connection, connecting_ts))| PoolEntry { entity, connection, connecting_ts })
            .collect();
        entries.sort_by(|a, b| b.connecting_ts.cmp(&a.connecting_ts).then_with(|| a.entity.cmp(&b.entity)));
        Ok(entries)
    }

    /// The structural neighborhood, truncated to `cap` most recent members.
    pub fn candidate_pool(&self, user: &EntityId, cap: usize) -> Result<Vec<EntityId>> {
        if cap == 0 {
            return Err(GraphError::InvalidArgument("pool cap must be positive".into()));
        }
        let mut entries = self.pool_entries(user)?;
        entries.truncate(cap);
        Ok(entries.into_iter().map(|e| e.entity).collect())
    }

    /// Users other than `user` who consumed `item` and share at least one
    /// item with `user`.
    pub fn co_consumers(&self, user: &EntityId, item: &EntityId) -> BTreeSet<EntityId> {
        let history = self.history_items(user);
        self.edges_of_item(item)
            .filter(|e| &e.user != user)
            .map(|e| e.user.clone())
            .filter(|v| self.edges_of_user(v).any(|e| history.contains(&e.item)))
            .collect()
    }

    /// Every edge endpoint resolves and the adjacency indices match the edge
    /// list exactly.
    pub fn check_integrity(&self) -> bool {
        let endpoints_ok =
            self.edges.iter().all(|e| self.nodes.contains_key(&e.user) && self.nodes.contains_key(&e.item));
        let mut users: BTreeMap<EntityId, Vec<usize>> = BTreeMap::new();
        let mut items: BTreeMap<EntityId, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.edges.iter().enumerate() {
            users.entry(e.user.clone()).or_default().push(i);
            items.entry(e.item.clone()).or_default().push(i);
        }
        endpoints_ok && users == self.user_index && items == self.item_index
    }

    fn insert_loaded_node(&mut self, node: NodeMemory) -> bool {
        if self.nodes.contains_key(&node.entity) {
            return false;
        }
        self.nodes.insert(node.entity.clone(), node);
        true
    }
}
