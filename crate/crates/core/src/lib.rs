//! Collaborative-memory recommendation engine.
//!
//! The pipeline has three stages around a versioned user–item memory graph:
//!
//! * **Stage-R** ([`curation`] + [`stage_r`]): score the structural
//!   neighborhood of a user with a domain rule set, keep the top-k, pack
//!   their representations under a token budget and ask the memory-manager
//!   model to distill preference facets.
//! * **Stage-ReRank** ([`rerank`]): score candidates grounded on those facets
//!   (or with the embedding ranker).
//! * **Stage-W** ([`propagation`]): after an interaction, one batched model
//!   call rewrites the user, the clicked item and any relevant curated
//!   neighbors; a background queue applies the writes with optimistic
//!   version checks.
//!
//! [`eval`] wires these into ranking experiments and [`ingest`] loads
//! datasets into the graph.

pub mod config;
pub mod curation;
pub mod eval;
pub mod gateway;
pub mod graph;
pub mod ingest;
pub mod prompts;
pub mod propagation;
pub mod rerank;
pub mod stage_r;
pub mod text;

pub use config::{
    AblationConfig, BackendConfig, BackendKind, ConfigError, PipelineConfig, PropagationMode, RankerKind,
};
pub use curation::{
    builtin_ruleset, curate, generate_ruleset, score_neighbor, CuratedNeighborhood, Domain, DomainContext,
    FeatureVector, RuleSet,
};
pub use eval::{run_experiment, sample_cases, EvalCase, EvalReport, Pipeline};
pub use gateway::{CallLedger, ChatRequest, Gateway, Role, Stage};
pub use graph::{EntityId, EntityKind, InteractionEdge, MemoryGraph, NodeMemory, SharedGraph};
pub use ingest::{ingest, IngestSummary};
pub use propagation::{InteractionEvent, PropagationResult, UpdateQueue};
pub use rerank::{RankedList, RecommendationRequest, ScoredCandidate};
pub use stage_r::{CollabMemory, Facet, NeighborRepresentation, SupportEdge};

/// Seconds since the Unix epoch.
pub type Timestamp = i64;

pub const SECONDS_PER_DAY: f64 = 86_400.0;
