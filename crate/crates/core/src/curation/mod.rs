//! Neighbor curation: feature extraction, rule-set scoring and top-k
//! selection, plus rule-set generation through the memory manager.

mod builtin;
mod features;
mod generate;
mod rules;

pub use builtin::{builtin_ruleset, generic_ruleset, Domain, DomainContext};
pub use features::{
    compute_features, ConstantSimilarity, FeatureVector, NeighborKind, SimilarityProvider, TokenOverlapSimilarity,
};
pub use generate::{generate_ruleset, meta_prompt, parse_generated_rules};
pub use rules::{Action, Clause, Comparator, Condition, Feature, Rule, RuleSet};

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::graph::{EntityId, GraphError, MemoryGraph};
use crate::prompts::PromptError;
use crate::Timestamp;

#[derive(Debug, Error)]
pub enum CurationError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{neighbor} is not in the structural neighborhood of {user}")]
    NotANeighbor { user: EntityId, neighbor: EntityId },
    #[error("invalid rule set: {0}")]
    InvalidRuleSet(String),
    #[error("cannot parse rules: {message}")]
    RuleParse { message: String, raw: String },
    #[error("invalid domain context: {0}")]
    InvalidContext(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedMember {
    pub entity: EntityId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedNeighborhood {
    pub user: EntityId,
    /// Score descending, ties by ascending id.
    pub members: Vec<CuratedMember>,
    pub k: usize,
}

impl CuratedNeighborhood {
    pub fn empty(user: EntityId, k: usize) -> Self {
        Self { user, members: Vec::new(), k }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, entity: &EntityId) -> bool {
        self.members.iter().any(|m| &m.entity == entity)
    }

    pub fn ids(&self) -> impl Iterator<Item = &EntityId> {
        self.members.iter().map(|m| &m.entity)
    }
}

pub fn score_neighbor(features: &FeatureVector, ruleset: &RuleSet) -> f64 {
    ruleset.score(features)
}

/// Ranking order for curated members.
pub fn member_order(a: &CuratedMember, b: &CuratedMember) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.entity.cmp(&b.entity))
}

/// Scores the whole structural neighborhood and keeps the top `k`.
pub fn curate(
    graph: &MemoryGraph,
    user: &EntityId,
    ruleset: &RuleSet,
    k: usize,
    now: Timestamp,
    similarity: &dyn SimilarityProvider,
) -> Result<CuratedNeighborhood, CurationError> {
    if k == 0 {
        return Err(CurationError::InvalidArgument("k must be positive".into()));
    }
    let mut members: Vec<CuratedMember> = graph
        .pool_entries(user)?
        .iter()
        .map(|entry| CuratedMember {
            entity: entry.entity.clone(),
            score: ruleset.score(&features::features_for_entry(graph, user, entry, now, similarity)),
        })
        .collect();
    members.sort_by(member_order);
    members.truncate(k);
    Ok(CuratedNeighborhood { user: user.clone(), members, k })
}
