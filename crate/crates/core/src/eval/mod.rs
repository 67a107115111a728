//! Ranking experiments: metrics, the end-to-end pipeline, ablations,
//! reports and rationale judging.

mod judge;
mod metrics;
mod pipeline;
mod report;

pub use judge::{judge_rationales, CriterionMeans, JudgeItem, JudgeReport};
pub use metrics::{hit_at_k, ndcg_at_k};
pub use pipeline::{run_experiment, sample_cases, CaseResult, ExperimentOutput, Pipeline};
pub use report::{EvalReport, MetricRow};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ConfigError;
use crate::curation::CurationError;
use crate::gateway::GatewayError;
use crate::graph::{EntityId, GraphError};
use crate::prompts::PromptError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cutoff K must be at least 1, got {0}")]
    InvalidK(usize),
    #[error("rank must be at least 1, got {0}")]
    InvalidRank(usize),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Curation(#[from] CurationError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub case_id: String,
    pub user: EntityId,
    pub instruction: String,
    pub candidates: Vec<EntityId>,
    pub ground_truth: EntityId,
}

impl EvalCase {
    pub fn validate(&self) -> Result<(), EvalError> {
        let err = |m: String| Err(EvalError::Dataset(format!("case {}: {m}", self.case_id)));
        if self.candidates.is_empty() {
            return err("no candidates".into());
        }
        let distinct: BTreeSet<&EntityId> = self.candidates.iter().collect();
        if distinct.len() != self.candidates.len() {
            return err("duplicate candidates".into());
        }
        if !self.candidates.iter().all(EntityId::is_item) {
            return err("candidates must be items".into());
        }
        if !distinct.contains(&self.ground_truth) {
            return err(format!("ground truth {} is not among the candidates", self.ground_truth));
        }
        Ok(())
    }
}
