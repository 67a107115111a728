//! Stage-W: batched memory propagation after an interaction.
//!
//! One memory-manager call rewrites the acting user, the clicked item and
//! any curated neighbors the model deems relevant. Events go through an
//! [`UpdateQueue`]; a [`Worker`] applies results with version-checked
//! writes, re-running the call when the user or item changed underneath it.

mod queue;

pub use queue::{BackgroundWorker, DeadLetter, DrainStats, UpdateQueue, Worker, MAX_RETRIES};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PropagationMode;
use crate::curation::CuratedNeighborhood;
use crate::gateway::{CallKind, CallLedger, ChatRequest, Field, Gateway, GatewayError, Role, Shape, Stage};
use crate::graph::{EntityId, GraphError, MemoryGraph};
use crate::prompts::{join_list, list_line, render, PromptError, PromptId, EMPTY_LIST};
use crate::stage_r::{resolve_id, CollabMemory};
use crate::Timestamp;

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("propagation reply rejected: {message}")]
    InvalidResult { message: String, raw: String },
}

impl PropagationError {
    pub fn raw_text(&self) -> Option<&str> {
        match self {
            PropagationError::Gateway(e) => e.raw_text(),
            PropagationError::InvalidResult { raw, .. } => Some(raw),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub user: EntityId,
    pub item: EntityId,
    /// Absent when the collaborative read stage is disabled.
    pub collab: Option<CollabMemory>,
    pub curated: CuratedNeighborhood,
    /// Versions observed when the event was created (diagnostic only; the
    /// worker re-reads at apply time).
    pub user_version_seen: u64,
    pub item_version_seen: u64,
    pub event_time: Timestamp,
}

impl InteractionEvent {
    /// Captures the current user and item versions from `graph`.
    pub fn capture(
        graph: &MemoryGraph,
        user: &EntityId,
        item: &EntityId,
        collab: Option<CollabMemory>,
        curated: CuratedNeighborhood,
        event_time: Timestamp,
    ) -> Result<Self, GraphError> {
        Ok(Self {
            user: user.clone(),
            item: item.clone(),
            collab,
            curated,
            user_version_seen: graph.require(user)?.version,
            item_version_seen: graph.require(item)?.version,
            event_time,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborUpdate {
    #[serde(rename = "neighbor_id")]
    pub neighbor: EntityId,
    pub memory_update: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationResult {
    pub user_memory: String,
    pub item_memory: String,
    pub neighbor_updates: Vec<NeighborUpdate>,
}

/// Memories and versions read from the graph right before a Stage-W call.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryView {
    pub user_memory: String,
    pub user_version: u64,
    pub item_memory: String,
    pub item_title: String,
    pub item_version: u64,
    /// Curated neighbors in curated order, with memory text and version.
    pub neighbors: Vec<(EntityId, String, u64)>,
}

impl MemoryView {
    pub fn read(graph: &MemoryGraph, event: &InteractionEvent) -> Result<Self, GraphError> {
        let user = graph.require(&event.user)?;
        let item = graph.require(&event.item)?;
        let neighbors = event
            .curated
            .ids()
            .filter(|id| **id != event.user && **id != event.item)
            .filter_map(|id| graph.node(id).map(|n| (id.clone(), n.text.clone(), n.version)))
            .collect();
        Ok(Self {
            user_memory: user.text.clone(),
            user_version: user.version,
            item_memory: item.text.clone(),
            item_title: item.display_title().to_string(),
            item_version: item.version,
            neighbors,
        })
    }
}

fn or_empty(text: &str) -> &str {
    if text.trim().is_empty() {
        EMPTY_LIST
    } else {
        text.trim()
    }
}

pub fn render_propagation_prompt(
    event: &InteractionEvent,
    view: &MemoryView,
    neighbors: &[(EntityId, String, u64)],
) -> Result<String, PropagationError> {
    let facets = event.collab.as_ref().map_or_else(|| EMPTY_LIST.to_string(), CollabMemory::formatted_facets);
    let formatted_neighbors = join_list(neighbors.iter().map(|(id, text, _)| list_line(id, or_empty(text))));
    let n_neighbors = neighbors.len().to_string();
    let info = crate::text::single_line(&view.item_title);
    Ok(render(
        PromptId::StageWPropagation,
        &[
            ("user_id", &event.user.id),
            ("item_id", &event.item.id),
            ("clicked_item_info", &info),
            ("formatted_facets", &facets),
            ("current_user_memory", or_empty(&view.user_memory)),
            ("current_item_memory", or_empty(&view.item_memory)),
            ("n_neighbors", &n_neighbors),
            ("formatted_neighbors", &formatted_neighbors),
        ],
    )?)
}

fn propagation_shape() -> Shape {
    Shape::object([
        Field::required("user_memory", Shape::String),
        Field::required("item_memory", Shape::String),
        Field::optional(
            "neighbor_updates",
            Shape::array(Shape::object([
                Field::required("neighbor_id", Shape::Id),
                Field::required("memory_update", Shape::String),
                Field::optional("rationale", Shape::String),
            ])),
        ),
    ])
}

fn call_stage_w(
    event: &InteractionEvent,
    view: &MemoryView,
    neighbors: &[(EntityId, String, u64)],
    gateway: &Gateway,
    kind: CallKind,
) -> Result<PropagationResult, PropagationError> {
    let prompt = render_propagation_prompt(event, view, neighbors)?;
    let request = ChatRequest::new(Role::Mem, Stage::StageW, prompt).with_kind(kind);
    let reply = gateway.complete_structured(&request, &propagation_shape())?;
    let value = &reply.value;
    let user_memory = value["user_memory"].as_str().unwrap_or_default().trim().to_string();
    let item_memory = value["item_memory"].as_str().unwrap_or_default().trim().to_string();
    if user_memory.is_empty() || item_memory.is_empty() {
        return Err(PropagationError::InvalidResult { message: "empty user or item memory".into(), raw: reply.raw });
    }
    let mut neighbor_updates: Vec<NeighborUpdate> = Vec::new();
    for raw in value["neighbor_updates"].as_array().into_iter().flatten() {
        let Some(neighbor) = resolve_id(&raw["neighbor_id"], neighbors.iter().map(|(id, _, _)| id)) else {
            log::warn!("dropping update for non-curated neighbor {}", raw["neighbor_id"]);
            continue;
        };
        let memory_update = raw["memory_update"].as_str().unwrap_or_default().trim().to_string();
        if memory_update.is_empty() || neighbor_updates.iter().any(|u| u.neighbor == neighbor) {
            continue;
        }
        let rationale = raw["rationale"].as_str().unwrap_or_default().to_string();
        neighbor_updates.push(NeighborUpdate { neighbor, memory_update, rationale });
    }
    Ok(PropagationResult { user_memory, item_memory, neighbor_updates })
}

/// One batched Stage-W call covering user, item and neighbors.
pub fn propagate(
    event: &InteractionEvent,
    view: &MemoryView,
    gateway: &Gateway,
    kind: CallKind,
) -> Result<PropagationResult, PropagationError> {
    call_stage_w(event, view, &view.neighbors, gateway, kind)
}

/// Comparison baseline: one call for the user and item, then one call per
/// curated neighbor.
pub fn propagate_naive(
    event: &InteractionEvent,
    view: &MemoryView,
    gateway: &Gateway,
    kind: CallKind,
) -> Result<PropagationResult, PropagationError> {
    let mut result = call_stage_w(event, view, &[], gateway, kind)?;
    for neighbor in &view.neighbors {
        let single = call_stage_w(event, view, std::slice::from_ref(neighbor), gateway, kind)?;
        result.neighbor_updates.extend(single.neighbor_updates);
    }
    Ok(result)
}

pub fn run_propagation(
    mode: PropagationMode,
    event: &InteractionEvent,
    view: &MemoryView,
    gateway: &Gateway,
    kind: CallKind,
) -> Result<PropagationResult, PropagationError> {
    match mode {
        PropagationMode::Batched => propagate(event, view, gateway, kind),
        PropagationMode::Naive => propagate_naive(event, view, gateway, kind),
    }
}

/// Stage-W first-attempt calls per event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CallAudit {
    pub calls: u64,
    pub retries: u64,
    pub events: u64,
}

impl CallAudit {
    /// `None` when there were no events.
    pub fn ratio(&self) -> Option<f64> {
        (self.events > 0).then(|| self.calls as f64 / self.events as f64)
    }
}

impl fmt::Display for CallAudit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ratio() {
            Some(r) => write!(
                f,
                "{r:.2} Stage-W calls per event ({} calls, {} retries, {} events)",
                self.calls, self.retries, self.events
            ),
            None => write!(f, "{} calls / 0 events", self.calls),
        }
    }
}

pub fn call_complexity_audit(ledger: &CallLedger, n_events: u64) -> CallAudit {
    let entry = ledger.stage_total(Stage::StageW);
    CallAudit { calls: entry.calls, retries: entry.retries, events: n_events }
}
