//! Dataset loading.
//!
//! Input is newline-delimited JSON, one record per line, discriminated by
//! `kind`:
//!
//! ```text
//! {"kind":"user","id":"u1","memory":"Reads hard science fiction."}
//! {"kind":"item","id":"i1","title":"Dune","description":"Desert planet epic."}
//! {"kind":"interaction","user":"u1","item":"i1","weight":5,"timestamp":1700000000}
//! {"kind":"eval_case","case_id":"c1","user":"u1","instruction":"Something epic",
//!  "candidates":["i1","i2"],"ground_truth":"i1"}
//! ```
//!
//! Ids are bare; the record field decides whether they name a user or an
//! item. Interactions and cases may only reference nodes declared on an
//! earlier line, in an earlier file, or already present in the graph.
//! Blank lines and lines starting with `#` are ignored.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::EvalCase;
use crate::graph::{EntityId, GraphError, InteractionEdge, MemoryGraph};
use crate::Timestamp;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Line { path: PathBuf, line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetRecord {
    User {
        id: String,
        #[serde(default)]
        memory: String,
    },
    Item {
        id: String,
        #[serde(default)]
        title: String,
        #[serde(default)]
        description: String,
    },
    Interaction {
        user: String,
        item: String,
        weight: f64,
        timestamp: Timestamp,
    },
    EvalCase {
        #[serde(default)]
        case_id: Option<String>,
        user: String,
        instruction: String,
        candidates: Vec<String>,
        ground_truth: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestSummary {
    /// Newly created user nodes.
    pub users: usize,
    /// Newly created item nodes.
    pub items: usize,
    pub edges: usize,
    pub cases: usize,
    pub warnings: Vec<String>,
}

impl IngestSummary {
    pub fn counts(&self) -> (usize, usize, usize, usize, usize) {
        (self.users, self.items, self.edges, self.cases, self.warnings.len())
    }
}

impl std::fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "users {} items {} edges {} cases {} warnings {}",
            self.users,
            self.items,
            self.edges,
            self.cases,
            self.warnings.len()
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestOptions {
    /// Skip bad lines with a warning instead of failing.
    pub lenient: bool,
}

fn declared(graph: &MemoryGraph, id: EntityId) -> Result<EntityId, String> {
    if graph.contains(&id) {
        Ok(id)
    } else {
        Err(format!("{id} is referenced before it is declared"))
    }
}

fn entity(f: fn(String) -> Result<EntityId, GraphError>, raw: &str) -> Result<EntityId, String> {
    f(raw.to_string()).map_err(|e| e.to_string())
}

fn user_id(raw: String) -> Result<EntityId, GraphError> {
    EntityId::user(raw)
}

fn item_id(raw: String) -> Result<EntityId, GraphError> {
    EntityId::item(raw)
}

/// Applies one record. Returns the case it declares, if any.
fn apply_record(
    graph: &mut MemoryGraph,
    record: DatasetRecord,
    line_no: usize,
    summary: &mut IngestSummary,
) -> Result<Option<EvalCase>, String> {
    match record {
        DatasetRecord::User { id, memory } => {
            let id = entity(user_id, &id)?;
            let existed = graph.contains(&id);
            graph.upsert_node(id, &memory).map_err(|e| e.to_string())?;
            summary.users += usize::from(!existed);
        }
        DatasetRecord::Item { id, title, description } => {
            let id = entity(item_id, &id)?;
            let existed = graph.contains(&id);
            graph.upsert_item(id, &title, &description).map_err(|e| e.to_string())?;
            summary.items += usize::from(!existed);
        }
        DatasetRecord::Interaction { user, item, weight, timestamp } => {
            let user = declared(graph, entity(user_id, &user)?)?;
            let item = declared(graph, entity(item_id, &item)?)?;
            graph.record_interaction(InteractionEdge::new(user, item, weight, timestamp)).map_err(|e| e.to_string())?;
            summary.edges += 1;
        }
        DatasetRecord::EvalCase { case_id, user, instruction, candidates, ground_truth } => {
            let case = EvalCase {
                case_id: case_id.unwrap_or_else(|| format!("line-{line_no}")),
                user: declared(graph, entity(user_id, &user)?)?,
                instruction,
                candidates: candidates
                    .iter()
                    .map(|c| declared(graph, entity(item_id, c)?))
                    .collect::<Result<_, _>>()?,
                ground_truth: entity(item_id, &ground_truth)?,
            };
            case.validate().map_err(|e| e.to_string())?;
            summary.cases += 1;
            return Ok(Some(case));
        }
    }
    Ok(None)
}

/// Ingests one document. `path` only labels errors.
pub fn ingest_str(
    text: &str,
    path: &Path,
    graph: &mut MemoryGraph,
    options: IngestOptions,
    summary: &mut IngestSummary,
) -> Result<Vec<EvalCase>, IngestError> {
    let mut cases = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let outcome = serde_json::from_str::<DatasetRecord>(trimmed)
            .map_err(|e| e.to_string())
            .and_then(|record| apply_record(graph, record, line_no, summary));
        match outcome {
            Ok(Some(case)) => cases.push(case),
            Ok(None) => {}
            Err(message) if options.lenient => {
                let warning = format!("{}:{line_no}: {message}", path.display());
                log::warn!("skipping {warning}");
                summary.warnings.push(warning);
            }
            Err(message) => return Err(IngestError::Line { path: path.to_path_buf(), line: line_no, message }),
        }
    }
    Ok(cases)
}

/// Ingests `paths` in order into `graph`. Node declarations are idempotent;
/// interactions are appended.
pub fn ingest(
    paths: &[impl AsRef<Path>],
    graph: &mut MemoryGraph,
    options: IngestOptions,
) -> Result<(IngestSummary, Vec<EvalCase>), IngestError> {
    let mut summary = IngestSummary::default();
    let mut cases = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
        cases.extend(ingest_str(&text, path, graph, options, &mut summary)?);
    }
    Ok((summary, cases))
}

/// One `eval_case` record per line, ids written bare.
pub fn cases_to_jsonl(cases: &[EvalCase]) -> String {
    let mut out = String::new();
    for case in cases {
        let record = DatasetRecord::EvalCase {
            case_id: Some(case.case_id.clone()),
            user: case.user.id.clone(),
            instruction: case.instruction.clone(),
            candidates: case.candidates.iter().map(|c| c.id.clone()).collect(),
            ground_truth: case.ground_truth.id.clone(),
        };
        out.push_str(&serde_json::to_string(&record).expect("records serialize"));
        out.push('\n');
    }
    out
}
