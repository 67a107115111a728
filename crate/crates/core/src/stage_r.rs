//! Stage-R: neighbor representations under a token budget and synthesis
//! of the collaborative memory.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::curation::CuratedNeighborhood;
use crate::gateway::{estimate_tokens, ChatRequest, Field, Gateway, GatewayError, Role, Shape, Stage};
use crate::graph::{EntityId, EntityKind, MemoryGraph};
use crate::prompts::{join_list, list_line, render, PromptError, PromptId, EMPTY_LIST};
use crate::Timestamp;

#[derive(Debug, Error)]
pub enum StageRError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("synthesis produced no valid facets")]
    EmptySynthesis { raw: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RepKind {
    TruncatedMemory,
    RecentTitles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborRepresentation {
    pub entity: EntityId,
    pub rep_text: String,
    pub rep_kind: RepKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Facet {
    #[serde(rename = "facet")]
    pub text: String,
    pub confidence: f64,
    pub supporting_neighbors: Vec<EntityId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportEdge {
    pub from: EntityId,
    pub to: EntityId,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollabMemory {
    pub user: EntityId,
    pub facets: Vec<Facet>,
    pub support_edges: Vec<SupportEdge>,
    pub synthesized_at: Timestamp,
}

impl CollabMemory {
    /// The `{facets, support_edges}` object as the model is asked to emit it.
    pub fn to_wire_json(&self) -> Value {
        json!({"facets": self.facets, "support_edges": self.support_edges})
    }

    /// One `- <confidence>: <facet>` line per facet.
    pub fn formatted_facets(&self) -> String {
        join_list(self.facets.iter().map(|f| list_line(format!("{:.2}", f.confidence), &f.text)))
    }

    pub fn facet_text(&self) -> String {
        self.facets.iter().map(|f| f.text.as_str()).collect::<Vec<_>>().join("\n")
    }
}

/// Cuts `text` to at most `tokens` estimated tokens, marking the cut with
/// an ellipsis.
pub fn truncate_to_tokens(text: &str, tokens: usize) -> String {
    if estimate_tokens(text) <= tokens {
        return text.to_string();
    }
    if tokens == 0 {
        return String::new();
    }
    let mut out: String = text.chars().take(tokens * 4 - 1).collect();
    out.push('…');
    out
}

fn user_rep(graph: &MemoryGraph, user: &EntityId, titles: usize) -> String {
    let titles = graph.recent_item_titles(user, titles);
    if titles.is_empty() {
        "Recent: none".to_string()
    } else {
        format!("Recent: {}", titles.join(", "))
    }
}

fn item_rep(graph: &MemoryGraph, item: &EntityId) -> String {
    match graph.node(item) {
        Some(node) if !node.text.trim().is_empty() => node.text.clone(),
        Some(node) => node.display_title().to_string(),
        None => item.id.clone(),
    }
}

/// Walks curated members in score order. Each item memory is cut to an
/// even share of the remaining budget; user neighbors list their most
/// recent item titles. Members that do not fit are skipped, except that the
/// first member is truncated to the whole budget so a non-empty
/// neighborhood always yields a representation.
pub fn represent_neighbors(
    curated: &CuratedNeighborhood,
    graph: &MemoryGraph,
    budget_tokens: usize,
    titles_per_user: usize,
) -> Result<Vec<NeighborRepresentation>, StageRError> {
    if budget_tokens == 0 {
        return Err(StageRError::InvalidArgument("token budget must be positive".into()));
    }
    let mut remaining = budget_tokens;
    let mut reps = Vec::new();
    let total = curated.members.len();
    for (idx, member) in curated.members.iter().enumerate() {
        let share = (remaining / (total - idx)).max(1);
        let (mut text, kind) = match member.entity.kind {
            EntityKind::Item => (truncate_to_tokens(&item_rep(graph, &member.entity), share), RepKind::TruncatedMemory),
            EntityKind::User => (user_rep(graph, &member.entity, titles_per_user), RepKind::RecentTitles),
        };
        if estimate_tokens(&text) > remaining {
            if !reps.is_empty() || remaining == 0 {
                continue;
            }
            text = truncate_to_tokens(&text, remaining);
        }
        remaining -= estimate_tokens(&text);
        reps.push(NeighborRepresentation { entity: member.entity.clone(), rep_text: text, rep_kind: kind });
    }
    Ok(reps)
}

fn synthesis_shape() -> Shape {
    Shape::object([
        Field::required(
            "facets",
            Shape::array(Shape::object([
                Field::required("facet", Shape::String),
                Field::required("confidence", Shape::Number),
                Field::required("supporting_neighbors", Shape::array(Shape::Id)),
            ])),
        ),
        Field::optional(
            "support_edges",
            Shape::array(Shape::object([
                Field::required("from", Shape::Id),
                Field::required("to", Shape::Id),
                Field::required("w", Shape::Number),
            ])),
        ),
    ])
}

/// Maps a model-written id (`"User-7"`, `"7"` or `7`) to one of `known`.
pub(crate) fn resolve_id<'a>(value: &Value, known: impl IntoIterator<Item = &'a EntityId>) -> Option<EntityId> {
    let raw = match value {
        Value::String(s) => s.trim().to_string(),
        Value::Number(n) => n.to_string(),
        _ => return None,
    };
    let parsed: Option<EntityId> = raw.parse().ok();
    let mut by_raw = None;
    for id in known {
        if parsed.as_ref() == Some(id) {
            return Some(id.clone());
        }
        if id.id == raw {
            if by_raw.is_some() {
                return None;
            }
            by_raw = Some(id.clone());
        }
    }
    by_raw
}

pub fn render_synthesis_prompt(
    user: &EntityId,
    user_memory: &str,
    reps: &[NeighborRepresentation],
    candidates: &[(EntityId, String)],
    n_facets: usize,
) -> Result<String, StageRError> {
    let memory = if user_memory.trim().is_empty() { EMPTY_LIST } else { user_memory.trim() };
    let neighbors = join_list(reps.iter().map(|r| list_line(&r.entity, &r.rep_text)));
    let candidate_list = join_list(candidates.iter().map(|(id, text)| list_line(id, text)));
    let n = n_facets.to_string();
    Ok(render(
        PromptId::StageRSynthesis,
        &[
            ("user_id", &user.id),
            ("user_memory_summary", memory),
            ("formatted_neighbor_list", &neighbors),
            ("formatted_candidate_list", &candidate_list),
            ("n_facets", &n),
        ],
    )?)
}

/// Asks the memory manager for up to `n_facets` facets grounded on `reps`.
/// Facets citing ids outside the curated neighborhood, or with confidence
/// outside `[0, 1]`, are dropped.
#[allow(clippy::too_many_arguments)]
pub fn synthesize(
    user: &EntityId,
    user_memory: &str,
    reps: &[NeighborRepresentation],
    candidates: &[(EntityId, String)],
    n_facets: usize,
    curated: &CuratedNeighborhood,
    gateway: &Gateway,
    now: Timestamp,
) -> Result<CollabMemory, StageRError> {
    if n_facets == 0 {
        return Err(StageRError::InvalidArgument("n_facets must be positive".into()));
    }
    let prompt = render_synthesis_prompt(user, user_memory, reps, candidates, n_facets)?;
    let reply = gateway.complete_structured(&ChatRequest::new(Role::Mem, Stage::StageR, prompt), &synthesis_shape())?;
    let collab = parse_synthesis(user, &reply.value, n_facets, curated, now);
    if collab.facets.is_empty() {
        return Err(StageRError::EmptySynthesis { raw: reply.raw });
    }
    Ok(collab)
}

fn parse_synthesis(
    user: &EntityId,
    value: &Value,
    n_facets: usize,
    curated: &CuratedNeighborhood,
    now: Timestamp,
) -> CollabMemory {
    let mut facets = Vec::new();
    for raw in value["facets"].as_array().into_iter().flatten() {
        let text = raw["facet"].as_str().unwrap_or_default().trim();
        let confidence = raw["confidence"].as_f64().unwrap_or(f64::NAN);
        if text.is_empty() || !(0.0..=1.0).contains(&confidence) {
            log::warn!("dropping facet {raw}: empty text or confidence outside [0, 1]");
            continue;
        }
        let cited = raw["supporting_neighbors"].as_array().cloned().unwrap_or_default();
        let resolved: Option<Vec<EntityId>> = cited.iter().map(|v| resolve_id(v, curated.ids())).collect();
        let Some(mut supporting) = resolved else {
            log::warn!("dropping facet {text:?}: cites a neighbor outside the curated set");
            continue;
        };
        supporting.dedup();
        facets.push(Facet { text: text.to_string(), confidence, supporting_neighbors: supporting });
    }
    if facets.len() > n_facets {
        facets.truncate(n_facets);
    } else if facets.len() < n_facets {
        log::debug!("synthesis for {user} returned {} of {n_facets} facets", facets.len());
    }

    let mut support_edges = Vec::new();
    for raw in value["support_edges"].as_array().into_iter().flatten() {
        let from = resolve_id(&raw["from"], curated.ids());
        let to = resolve_id(&raw["to"], [user]);
        let w = raw["w"].as_f64().unwrap_or(f64::NAN);
        match (from, to) {
            (Some(from), Some(to)) if (0.0..=1.0).contains(&w) => support_edges.push(SupportEdge { from, to, w }),
            _ => log::warn!("dropping support edge {raw}"),
        }
    }
    CollabMemory { user: user.clone(), facets, support_edges, synthesized_at: now }
}
