use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, RankerKind};
use crate::curation::{
    curate, generate_ruleset, generic_ruleset, CuratedNeighborhood, CurationError, RuleSet, SimilarityProvider,
};
use crate::gateway::{Backend, CallLedger, Embedder, Gateway};
use crate::graph::{EntityId, MemoryGraph, SharedGraph};
use crate::propagation::{call_complexity_audit, DrainStats, InteractionEvent, UpdateQueue, Worker};
use crate::rerank::{
    rerank_llm, rerank_vector, sort_ranked, Grounding, RankedList, RecommendationRequest, ScoredCandidate, UNSCORED,
};
use crate::stage_r::{represent_neighbors, synthesize, CollabMemory};
use crate::text::fnv1a64;
use crate::Timestamp;

use super::report::EvalReport;
use super::{EvalCase, EvalError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub user: EntityId,
    pub ground_truth: EntityId,
    /// 1-based rank of the ground truth.
    pub rank: usize,
    pub ranked: RankedList,
    /// Stage-R failed and the case fell back to personal memory.
    pub stage_r_fallback: bool,
    /// Ranking failed and candidates kept their presented order.
    pub rerank_failed: bool,
}

/// The assembled engine for one configuration.
pub struct Pipeline {
    config: PipelineConfig,
    graph: SharedGraph,
    ledger: Arc<CallLedger>,
    mem: Gateway,
    rec: Gateway,
    embedder: Option<Box<dyn Embedder>>,
    similarity: Box<dyn SimilarityProvider>,
    ruleset: RuleSet,
    ruleset_source: String,
    queue: UpdateQueue,
    worker: Worker,
    now: Timestamp,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("ruleset", &self.ruleset.domain)
            .field("mem", &self.mem)
            .field("rec", &self.rec)
            .finish_non_exhaustive()
    }
}

pub struct ExperimentOutput {
    pub report: EvalReport,
    pub graph: MemoryGraph,
    pub ledger: Arc<CallLedger>,
}

impl Pipeline {
    /// Builds backends from the config.
    pub fn from_config(config: PipelineConfig, graph: MemoryGraph) -> Result<Self, EvalError> {
        let mem = config.backends.mem.build_chat()?;
        let rec = config.backends.rec.build_chat()?;
        Self::with_backends(config, graph, mem, rec)
    }

    pub fn with_backends(
        config: PipelineConfig,
        graph: MemoryGraph,
        mem: Arc<dyn Backend>,
        rec: Arc<dyn Backend>,
    ) -> Result<Self, EvalError> {
        config.validate()?;
        let ledger = Arc::new(CallLedger::new());
        let mem = Gateway::new(mem, Arc::clone(&ledger)).with_temperature(config.temperature);
        let rec = Gateway::new(rec, Arc::clone(&ledger)).with_temperature(config.temperature);
        let embedder = match config.ranker {
            RankerKind::Vector => Some(config.embedder()?),
            RankerKind::Llm => None,
        };
        let now = config.now.or_else(|| graph.latest_timestamp()).unwrap_or(0);
        let (ruleset, ruleset_source) = resolve_ruleset(&config, &mem)?;
        let graph = SharedGraph::new(graph);
        let worker = Worker::new(graph.clone(), mem.clone()).with_mode(config.propagation);
        Ok(Self {
            similarity: config.similarity_provider(),
            config,
            graph,
            ledger,
            mem,
            rec,
            embedder,
            ruleset,
            ruleset_source,
            queue: UpdateQueue::new(),
            worker,
            now,
        })
    }

    /// Failed Stage-W events are appended to `path`.
    pub fn with_dead_letter(mut self, path: impl Into<std::path::PathBuf>) -> Self {
        self.worker = self.worker.with_dead_letter(path);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn graph(&self) -> &SharedGraph {
        &self.graph
    }

    pub fn ledger(&self) -> &Arc<CallLedger> {
        &self.ledger
    }

    pub fn ruleset(&self) -> &RuleSet {
        &self.ruleset
    }

    pub fn ruleset_source(&self) -> &str {
        &self.ruleset_source
    }

    pub fn queue(&self) -> &UpdateQueue {
        &self.queue
    }

    pub fn worker(&self) -> &Worker {
        &self.worker
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    fn presented_candidates(&self, case: &EvalCase, graph: &MemoryGraph) -> Result<Vec<(EntityId, String)>, EvalError> {
        let mut candidates = Vec::with_capacity(case.candidates.len());
        for id in &case.candidates {
            let node = graph
                .node(id)
                .ok_or_else(|| EvalError::Dataset(format!("case {}: unknown candidate {id}", case.case_id)))?;
            candidates.push((id.clone(), node.text.clone()));
        }
        if let Some(seed) = self.config.candidate_shuffle_seed {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(case.case_id.as_bytes()));
            candidates.shuffle(&mut rng);
        }
        Ok(candidates)
    }

    /// Stage-R and ranking for one case, plus Stage-W when writes are on.
    pub fn run_case(&self, case: &EvalCase) -> Result<CaseResult, EvalError> {
        case.validate()?;
        let ablation = self.config.ablation;
        let (user_memory, candidates, curated, reps, titles) = {
            let graph = self.graph.read();
            let user_memory = graph.require(&case.user)?.text.clone();
            let candidates = self.presented_candidates(case, &graph)?;
            let curated = if ablation.collab_read || ablation.collab_write {
                curate(&graph, &case.user, &self.ruleset, self.config.k, self.now, self.similarity.as_ref())?
            } else {
                CuratedNeighborhood::empty(case.user.clone(), self.config.k)
            };
            let reps = if ablation.collab_read {
                represent_neighbors(&curated, &graph, self.config.token_budget, self.config.titles_per_user)
                    .map_err(|e| EvalError::Dataset(e.to_string()))?
            } else {
                Vec::new()
            };
            let titles: Vec<(EntityId, String)> = candidates
                .iter()
                .map(|(id, _)| (id.clone(), graph.node(id).map(|n| n.display_title().to_string()).unwrap_or_default()))
                .collect();
            (user_memory, candidates, curated, reps, titles)
        };

        let mut stage_r_fallback = false;
        let collab: Option<CollabMemory> = if ablation.collab_read {
            match synthesize(
                &case.user,
                &user_memory,
                &reps,
                &titles,
                self.config.n_facets,
                &curated,
                &self.mem,
                self.now,
            ) {
                Ok(collab) => Some(collab),
                Err(e) => {
                    log::warn!("case {}: Stage-R failed ({e}); ranking on personal memory", case.case_id);
                    stage_r_fallback = true;
                    None
                }
            }
        } else {
            None
        };

        let request =
            RecommendationRequest { user: case.user.clone(), instruction: case.instruction.clone(), candidates };
        let grounding = collab.as_ref().map_or(Grounding::PersonalOnly(&user_memory), Grounding::Collaborative);
        let ranked = match (&self.config.ranker, &self.embedder) {
            (RankerKind::Vector, Some(embedder)) => rerank_vector(&request, grounding, embedder.as_ref()),
            _ => rerank_llm(&request, grounding, &self.rec),
        };
        let (ranked, rerank_failed) = match ranked {
            Ok(ranked) => (ranked, false),
            Err(e) => {
                log::warn!("case {}: ranking failed ({e}); keeping presented order", case.case_id);
                let entries = request
                    .candidates
                    .iter()
                    .map(|(id, _)| ScoredCandidate { item: id.clone(), score: 0.0, rationale: UNSCORED.into() })
                    .collect();
                (sort_ranked(entries), true)
            }
        };
        let rank = ranked.rank_of(&case.ground_truth).expect("ranked list is a permutation of the candidates");

        if ablation.collab_write {
            let event = InteractionEvent::capture(
                &self.graph.read(),
                &case.user,
                &case.ground_truth,
                collab,
                curated,
                self.now,
            )?;
            self.queue.enqueue(event);
            self.worker.drain(&self.queue);
        }

        Ok(CaseResult {
            case_id: case.case_id.clone(),
            user: case.user.clone(),
            ground_truth: case.ground_truth.clone(),
            rank,
            ranked,
            stage_r_fallback,
            rerank_failed,
        })
    }

    /// Runs every case in order. With writes disabled, `jobs > 1` spreads
    /// cases over a thread pool; results keep case order.
    pub fn run(&self, cases: &[EvalCase], jobs: usize) -> Result<EvalReport, EvalError> {
        for case in cases {
            case.validate()?;
        }
        let results: Vec<CaseResult> = if jobs > 1 && !self.config.ablation.collab_write {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| EvalError::Dataset(format!("cannot start worker pool: {e}")))?;
            pool.install(|| cases.par_iter().map(|c| self.run_case(c)).collect::<Result<_, _>>())?
        } else {
            cases.iter().map(|c| self.run_case(c)).collect::<Result<_, _>>()?
        };
        let events = if self.config.ablation.collab_write { cases.len() as u64 } else { 0 };
        let stats = DrainStats { applied: self.queue.applied(), failed: self.queue.failed() };
        Ok(EvalReport::build(
            &self.config,
            &self.ruleset_source,
            &results,
            &self.ledger,
            stats,
            call_complexity_audit(&self.ledger, events),
        ))
    }
}

fn resolve_ruleset(config: &PipelineConfig, mem: &Gateway) -> Result<(RuleSet, String), EvalError> {
    if !config.ablation.llm_curation {
        return Ok((generic_ruleset(), "generic".into()));
    }
    if let Some(path) = &config.ruleset_path {
        let text = std::fs::read_to_string(path)
            .map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
        return Ok((RuleSet::from_text(&text)?, format!("file {}", path.display())));
    }
    match generate_ruleset(&config.domain.context(), mem) {
        Ok(set) => Ok((set, "generated".into())),
        Err(CurationError::RuleParse { message, .. }) => {
            log::warn!("generated rules unusable ({message}); using the generic rule set");
            Ok((generic_ruleset(), "generic (generation fallback)".into()))
        }
        Err(e) => Err(e.into()),
    }
}

/// Runs `cases` against `graph` with backends built from `config`.
pub fn run_experiment(
    cases: &[EvalCase],
    config: &PipelineConfig,
    graph: MemoryGraph,
) -> Result<ExperimentOutput, EvalError> {
    let pipeline = Pipeline::from_config(config.clone(), graph)?;
    let report = pipeline.run(cases, 1)?;
    Ok(ExperimentOutput { report, graph: pipeline.graph.snapshot_clone(), ledger: Arc::clone(&pipeline.ledger) })
}

/// `n` cases drawn without replacement with a seeded generator, kept in
/// their original order. Returns everything when `n >= cases.len()`.
pub fn sample_cases(cases: &[EvalCase], n: usize, seed: u64) -> Vec<EvalCase> {
    if n >= cases.len() {
        return cases.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, cases.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| cases[i].clone()).collect()
}
