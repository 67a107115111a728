//! Offline backends.
//!
//! [`MockBackend`] reads the rendered prompt back (see
//! [`crate::prompts::anchors`]) and answers each stage with a reply that is
//! a pure function of the prompt text and the seed:
//!
//! * Rule-Gen: the built-in rule set of the named domain, in the clause-line
//!   format; the generic rule set for unknown domains.
//! * Stage-R: one facet per most frequent content token across neighbor
//!   representations, confidence equal to the token's share of the selected
//!   counts clamped to `[0.3, 0.95]`.
//! * Stage-ReRank: share of request tokens (instruction plus facets) found in
//!   each candidate memory.
//! * Stage-W: a one-sentence theme summary appended to the user, item and
//!   theme-sharing neighbor memories.
//! * Judge: 3 on every criterion.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde_json::{json, Value};

use crate::curation::{builtin_ruleset, generic_ruleset, Domain};
use crate::prompts::{anchors, list_entries, section, section_body};
use crate::text::{content_token_set, content_tokens, fnv1a64};

use super::{Backend, BackendReply, ChatRequest, GatewayError, Stage};

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    seed: u64,
}

impl MockBackend {
    /// Seed 0 gives exact token-overlap scores; other seeds add a
    /// deterministic per-item offset below 1e-6 to rerank scores.
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn jitter(&self, key: &str) -> f64 {
        if self.seed == 0 {
            return 0.0;
        }
        let mut bytes = self.seed.to_le_bytes().to_vec();
        bytes.extend_from_slice(key.as_bytes());
        (fnv1a64(&bytes) % 1000) as f64 * 1e-9
    }
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn chat(&self, request: &ChatRequest) -> Result<BackendReply, GatewayError> {
        let prompt = request.user.as_str();
        let text = match request.stage {
            Stage::RuleGen => rule_gen_reply(prompt),
            Stage::StageR => stage_r_reply(prompt).to_string(),
            Stage::ReRank => self.rerank_reply(prompt).to_string(),
            Stage::StageW => stage_w_reply(prompt).to_string(),
            Stage::Judge => judge_reply().to_string(),
        };
        Ok(BackendReply { text, usage: None })
    }
}

fn rule_gen_reply(prompt: &str) -> String {
    let ruleset = section(prompt, anchors::META_DOMAIN)
        .and_then(Domain::from_domain_name)
        .map(builtin_ruleset)
        .unwrap_or_else(generic_ruleset);
    let mut out = String::new();
    for (n, rule) in ruleset.rules.iter().enumerate() {
        for clause in &rule.clauses {
            out.push_str(&format!("Rule {}: {} | {} | {}\n", n + 1, rule.name, clause.condition, clause.action));
        }
    }
    out
}

/// Token counts, ordered by count descending then token ascending.
pub fn ranked_tokens<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        for token in content_tokens(text) {
            *counts.entry(token).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

fn stage_r_reply(prompt: &str) -> Value {
    let user = section(prompt, anchors::R_USER).unwrap_or("").trim();
    let n_facets: usize =
        section(prompt, anchors::R_N_FACETS).and_then(|n| n.trim().parse().ok()).filter(|&n| n > 0).unwrap_or(1);
    let neighbors = section(prompt, anchors::R_NEIGHBORS).map(list_entries).unwrap_or_default();
    let user_memory = section(prompt, anchors::R_USER_MEMORY).unwrap_or("");

    let mut ranked = ranked_tokens(neighbors.iter().map(|(_, text)| text.as_str()));
    let from_neighbors = !ranked.is_empty();
    if !from_neighbors {
        ranked = ranked_tokens([user_memory]);
    }
    ranked.truncate(n_facets);

    let total: usize = ranked.iter().map(|(_, c)| c).sum();
    let neighbor_tokens: Vec<(&str, BTreeSet<String>)> =
        neighbors.iter().map(|(id, text)| (id.as_str(), content_token_set(text))).collect();
    let mut facets = Vec::new();
    let mut support: BTreeMap<&str, usize> = BTreeMap::new();
    for (token, count) in &ranked {
        let supporting: Vec<&str> =
            neighbor_tokens.iter().filter(|(_, set)| set.contains(token)).map(|(id, _)| *id).collect();
        for id in &supporting {
            *support.entry(id).or_default() += 1;
        }
        let confidence = (*count as f64 / total as f64).clamp(0.3, 0.95);
        facets.push(json!({
            "facet": format!("Interest in {token} themes"),
            "confidence": confidence,
            "supporting_neighbors": supporting,
        }));
    }
    if facets.is_empty() {
        facets.push(json!({
            "facet": "Broad interest without a dominant theme",
            "confidence": 0.3,
            "supporting_neighbors": [],
        }));
    }
    let n = facets.len() as f64;
    let to = format!("User-{user}");
    let support_edges: Vec<Value> = support
        .into_iter()
        .map(|(from, hits)| json!({"from": from, "to": to, "w": (hits as f64 / n).clamp(0.0, 1.0)}))
        .collect();
    json!({"facets": facets, "support_edges": support_edges})
}

impl MockBackend {
    fn rerank_reply(&self, prompt: &str) -> Value {
        let mut query = String::new();
        if let Some(instruction) = section(prompt, anchors::RR_INSTRUCTION) {
            query.push_str(instruction);
        }
        if let Some(facets) = section(prompt, anchors::RR_FACETS) {
            let entries = list_entries(facets);
            query.push('\n');
            if entries.is_empty() {
                query.push_str(facets);
            } else {
                let texts: Vec<&str> = entries.iter().map(|(_, text)| text.as_str()).collect();
                query.push_str(&texts.join("\n"));
            }
        }
        let scores: Vec<Value> = section(prompt, anchors::RR_CANDIDATES)
            .map(list_entries)
            .unwrap_or_default()
            .into_iter()
            .map(|(id, memory)| {
                let (score, rationale) = overlap_score(&query, &memory);
                json!({"item_id": id, "score": (score + self.jitter(&id)).min(1.0), "rationale": rationale})
            })
            .collect();
        json!({"scores": scores})
    }
}

/// `|Q ∩ C| / |Q|` over content-token sets, with a short rationale.
pub fn overlap_score(query: &str, candidate: &str) -> (f64, String) {
    let q = content_token_set(query);
    let c = content_token_set(candidate);
    let shared: Vec<&String> = q.intersection(&c).collect();
    if q.is_empty() || shared.is_empty() {
        return (0.0, "No overlap with the request or preference themes.".to_string());
    }
    let names: Vec<&str> = shared.iter().take(5).map(|s| s.as_str()).collect();
    (
        shared.len() as f64 / q.len() as f64,
        format!("Matches {} of {} request themes: {}.", shared.len(), q.len(), names.join(", ")),
    )
}

/// Up to three theme tokens from the facets and the clicked item's memory.
pub fn stage_w_themes(facets: &str, item_memory: &str) -> Vec<String> {
    ranked_tokens([facets, item_memory]).into_iter().take(3).map(|(t, _)| t).collect()
}

pub fn theme_sentence(themes: &[String]) -> String {
    if themes.is_empty() {
        "Recent interaction recorded.".to_string()
    } else {
        format!("Recent interaction themes: {}.", themes.join(", "))
    }
}

pub fn append_sentence(memory: &str, sentence: &str) -> String {
    let memory = memory.trim();
    if memory.is_empty() {
        sentence.to_string()
    } else {
        format!("{memory} {sentence}")
    }
}

fn stage_w_reply(prompt: &str) -> Value {
    let user_memory = section_body(prompt, anchors::W_USER_MEMORY).unwrap_or("");
    let item_memory = section_body(prompt, anchors::W_ITEM_MEMORY).unwrap_or("");
    let facets = section(prompt, anchors::W_FACETS).unwrap_or("");
    let themes = stage_w_themes(facets, item_memory);
    let sentence = theme_sentence(&themes);
    let theme_set: BTreeSet<&str> = themes.iter().map(String::as_str).collect();

    let neighbor_updates: Vec<Value> = section(prompt, anchors::W_NEIGHBORS)
        .map(list_entries)
        .unwrap_or_default()
        .into_iter()
        .filter_map(|(id, memory)| {
            let shared: Vec<String> =
                content_token_set(&memory).into_iter().filter(|t| theme_set.contains(t.as_str())).collect();
            (!shared.is_empty()).then(|| {
                json!({
                    "neighbor_id": id,
                    "memory_update": append_sentence(&memory, &sentence),
                    "rationale": format!("Shares themes: {}.", shared.join(", ")),
                })
            })
        })
        .collect();
    json!({
        "user_memory": append_sentence(user_memory, &sentence),
        "item_memory": append_sentence(item_memory, &sentence),
        "neighbor_updates": neighbor_updates,
    })
}

fn judge_reply() -> Value {
    let scores = json!({"specificity": 3, "relevance": 3, "factuality": 3});
    json!({"model_a": scores, "model_b": scores, "model_c": scores})
}

/// Replays canned replies in order, cycling when exhausted.
#[derive(Debug)]
pub struct ScriptedBackend {
    replies: Vec<String>,
    cursor: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        let replies: Vec<String> = replies.into_iter().map(Into::into).collect();
        assert!(!replies.is_empty(), "scripted backend needs at least one reply");
        Self { replies, cursor: AtomicUsize::new(0) }
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn chat(&self, _: &ChatRequest) -> Result<BackendReply, GatewayError> {
        let i = self.cursor.fetch_add(1, Ordering::SeqCst) % self.replies.len();
        Ok(BackendReply { text: self.replies[i].clone(), usage: None })
    }
}

/// Fails every call with a transport error.
#[derive(Debug, Default)]
pub struct FailingBackend {
    calls: AtomicUsize,
}

impl FailingBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for FailingBackend {
    fn name(&self) -> &str {
        "failing"
    }

    fn chat(&self, _: &ChatRequest) -> Result<BackendReply, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Err(GatewayError::Transport { attempts: 3, message: "backend unavailable".into() })
    }
}

type Handler = dyn Fn(&ChatRequest) -> Result<BackendReply, GatewayError> + Send + Sync;

/// Backend driven by a closure; used to inject latency or side effects.
pub struct FnBackend {
    handler: Box<Handler>,
    log: Mutex<Vec<ChatRequest>>,
}

impl FnBackend {
    pub fn new(handler: impl Fn(&ChatRequest) -> Result<BackendReply, GatewayError> + Send + Sync + 'static) -> Self {
        Self { handler: Box::new(handler), log: Mutex::new(Vec::new()) }
    }

    /// Wraps another backend, forwarding after `before` runs.
    pub fn wrap(inner: impl Backend + 'static, before: impl Fn(&ChatRequest) + Send + Sync + 'static) -> Self {
        Self::new(move |req| {
            before(req);
            inner.chat(req)
        })
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().expect("request log poisoned").clone()
    }
}

impl std::fmt::Debug for FnBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnBackend").finish_non_exhaustive()
    }
}

impl Backend for FnBackend {
    fn name(&self) -> &str {
        "fn"
    }

    fn chat(&self, request: &ChatRequest) -> Result<BackendReply, GatewayError> {
        self.log.lock().expect("request log poisoned").push(request.clone());
        (self.handler)(request)
    }
}
