//! Candidate scoring: the grounded model ranker and the embedding ranker.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{cosine, ChatRequest, Embedder, Field, Gateway, GatewayError, Role, Shape, Stage};
use crate::graph::EntityId;
use crate::prompts::{join_list, list_line, render, PromptError, PromptId, EMPTY_LIST};
use crate::stage_r::{resolve_id, CollabMemory};

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationRequest {
    pub user: EntityId,
    pub instruction: String,
    /// `(item, memory text)` in presentation order.
    pub candidates: Vec<(EntityId, String)>,
}

impl RecommendationRequest {
    pub fn validate(&self) -> Result<(), RerankError> {
        if self.candidates.is_empty() {
            return Err(RerankError::InvalidRequest("no candidates".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (id, _) in &self.candidates {
            if !seen.insert(id) {
                return Err(RerankError::InvalidRequest(format!("duplicate candidate {id}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    #[serde(rename = "item_id")]
    pub item: EntityId,
    pub score: f64,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<ScoredCandidate>,
}

impl RankedList {
    /// 1-based position of `item`.
    pub fn rank_of(&self, item: &EntityId) -> Option<usize> {
        self.entries.iter().position(|e| &e.item == item).map(|p| p + 1)
    }

    pub fn items(&self) -> impl Iterator<Item = &EntityId> {
        self.entries.iter().map(|e| &e.item)
    }
}

/// Stable sort by score descending; equal scores keep input order.
pub fn sort_ranked(mut entries: Vec<ScoredCandidate>) -> RankedList {
    entries.sort_by(|a, b| b.score.total_cmp(&a.score));
    RankedList { entries }
}

/// What the ranker is grounded on.
#[derive(Debug, Clone, Copy)]
pub enum Grounding<'a> {
    Collaborative(&'a CollabMemory),
    /// The user's own memory only.
    PersonalOnly(&'a str),
}

impl Grounding<'_> {
    fn formatted(&self) -> String {
        match self {
            Grounding::Collaborative(collab) => collab.formatted_facets(),
            Grounding::PersonalOnly(memory) if memory.trim().is_empty() => EMPTY_LIST.to_string(),
            Grounding::PersonalOnly(memory) => list_line("personal memory", memory),
        }
    }

    fn text(&self) -> String {
        match self {
            Grounding::Collaborative(collab) => collab.facet_text(),
            Grounding::PersonalOnly(memory) => memory.to_string(),
        }
    }
}

pub fn render_rerank_prompt(req: &RecommendationRequest, grounding: Grounding<'_>) -> Result<String, RerankError> {
    let candidates = join_list(req.candidates.iter().map(|(id, memory)| list_line(id, memory)));
    Ok(render(
        PromptId::StageReRank,
        &[
            ("user_id", &req.user.id),
            ("instruction", req.instruction.trim()),
            ("formatted_facets", &grounding.formatted()),
            ("formatted_item_memories", &candidates),
        ],
    )?)
}

fn rerank_shape() -> Shape {
    Shape::object([Field::required(
        "scores",
        Shape::array(Shape::object([
            Field::required("item_id", Shape::Id),
            Field::required("score", Shape::Number),
            Field::optional("rationale", Shape::String),
        ])),
    )])
}

pub const UNSCORED: &str = "unscored";

/// Scores candidates with the reasoning model. Out-of-range scores are
/// clamped to `[0, 1]`; candidates the reply leaves out score 0.
pub fn rerank_llm(
    req: &RecommendationRequest,
    grounding: Grounding<'_>,
    gateway: &Gateway,
) -> Result<RankedList, RerankError> {
    req.validate()?;
    let prompt = render_rerank_prompt(req, grounding)?;
    let reply = gateway.complete_structured(&ChatRequest::new(Role::Rec, Stage::ReRank, prompt), &rerank_shape())?;

    let known: Vec<&EntityId> = req.candidates.iter().map(|(id, _)| id).collect();
    let mut scored: BTreeMap<EntityId, (f64, String)> = BTreeMap::new();
    for raw in reply.value["scores"].as_array().into_iter().flatten() {
        let Some(item) = resolve_id(&raw["item_id"], known.iter().copied()) else {
            log::warn!("dropping score for unknown item {}", raw["item_id"]);
            continue;
        };
        let score = raw["score"].as_f64().unwrap_or(0.0).clamp(0.0, 1.0);
        let rationale = raw["rationale"].as_str().unwrap_or_default().to_string();
        scored.entry(item).or_insert((score, rationale));
    }
    let entries = req
        .candidates
        .iter()
        .map(|(id, _)| {
            let (score, rationale) = scored.remove(id).unwrap_or_else(|| (0.0, UNSCORED.to_string()));
            ScoredCandidate { item: id.clone(), score, rationale }
        })
        .collect();
    Ok(sort_ranked(entries))
}

pub const VECTOR_RATIONALE: &str = "vector-similarity";

/// Scores each candidate by `(cos + 1) / 2` between the embedded request
/// (instruction plus grounding text) and the candidate memory. Texts
/// without tokens score 0.
pub fn rerank_vector(
    req: &RecommendationRequest,
    grounding: Grounding<'_>,
    embedder: &dyn Embedder,
) -> Result<RankedList, RerankError> {
    req.validate()?;
    let query = format!("{}\n{}", req.instruction, grounding.text());
    let query_vec = match embedder.embed(&query) {
        Ok(v) => Some(v),
        Err(GatewayError::ZeroVector) => None,
        Err(e) => return Err(e.into()),
    };
    let mut entries = Vec::with_capacity(req.candidates.len());
    for (id, memory) in &req.candidates {
        let score = match (&query_vec, embedder.embed(memory)) {
            (Some(q), Ok(c)) => ((cosine(q, &c) + 1.0) / 2.0).clamp(0.0, 1.0),
            (_, Err(GatewayError::ZeroVector)) | (None, _) => 0.0,
            (_, Err(e)) => return Err(e.into()),
        };
        entries.push(ScoredCandidate { item: id.clone(), score, rationale: VECTOR_RATIONALE.to_string() });
    }
    Ok(sort_ranked(entries))
}
