#![allow(dead_code)]

pub mod fuzz;
pub mod prompts;
pub mod stress;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use memrec_core::curation::{
    Action, Comparator, Condition, CuratedMember, Feature, FeatureVector, RuleSet, SimilarityProvider,
};
use memrec_core::graph::{EntityId, EntityKind, InteractionEdge, MemoryGraph};
use memrec_core::ingest::{ingest, IngestOptions};
use memrec_core::text::fnv1a64;
use memrec_core::{EvalCase, Timestamp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

pub fn books_fixture() -> (MemoryGraph, Vec<EvalCase>) {
    let mut graph = MemoryGraph::new();
    let (_, cases) = ingest(&[fixture_path("books.jsonl")], &mut graph, IngestOptions::default()).unwrap();
    (graph, cases)
}

/// Compares against a committed file; `UPDATE_GOLDEN=1` rewrites it.
pub fn assert_golden(name: &str, actual: &str) {
    let path = golden_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("missing golden {}: {e}", path.display()));
    assert!(expected == actual, "golden mismatch for {name}\n--- expected\n{expected}\n--- actual\n{actual}");
}

pub fn uid(i: usize) -> EntityId {
    EntityId::user(format!("u{i}")).unwrap()
}

pub fn iid(i: usize) -> EntityId {
    EntityId::item(format!("i{i}")).unwrap()
}

const WORDS: [&str; 16] = [
    "dragon",
    "castle",
    "detective",
    "murder",
    "planet",
    "starship",
    "romance",
    "regency",
    "war",
    "empire",
    "magic",
    "village",
    "poison",
    "ocean",
    "robot",
    "garden",
];

/// Random bipartite graph with at most `max_nodes` nodes.
pub fn random_graph(seed: u64, max_nodes: usize) -> MemoryGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = rng.random_range(2..=max_nodes.max(2));
    let users = rng.random_range(1..total);
    let items = total - users;
    let mut g = MemoryGraph::new();
    for u in 0..users {
        g.upsert_node(uid(u), "").unwrap();
    }
    for i in 0..items {
        let desc: Vec<&str> = (0..3).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
        g.upsert_item(iid(i), &format!("Title {i}"), &desc.join(" ")).unwrap();
    }
    let n_edges = rng.random_range(0..=3 * total);
    for _ in 0..n_edges {
        let weight = f64::from(rng.random_range(1..=10u32)) / 2.0;
        let ts: Timestamp = rng.random_range(0..400) * 86_400 + rng.random_range(0..86_400);
        g.record_interaction(InteractionEdge::new(
            uid(rng.random_range(0..users)),
            iid(rng.random_range(0..items)),
            weight,
            ts,
        ))
        .unwrap();
    }
    g
}

/// User id named in a Stage-W prompt.
pub fn stage_w_user(prompt: &str) -> String {
    let line = prompt.lines().find(|l| l.contains(" has just interacted with")).unwrap();
    line.trim_start_matches("User ").split(' ').next().unwrap().to_string()
}

/// Titles listed in a recent-titles representation.
pub fn titles_in(rep: &str) -> usize {
    match rep.strip_prefix("Recent: ").unwrap() {
        "none" => 0,
        list => list.split(", ").count(),
    }
}

/// Hit and DCG by walking positions 1..=min(n, k).
pub fn scan_metrics(n: usize, rank: usize, k: usize) -> (f64, f64) {
    let mut hit = 0.0;
    let mut dcg = 0.0;
    for pos in 1..=n.min(k) {
        if pos == rank {
            hit = 1.0;
            dcg += 1.0 / (pos as f64 + 1.0).ln() * 2f64.ln();
        }
    }
    (hit, dcg)
}

/// Replaces every other item memory with a long repeated text.
pub fn with_long_memories(mut g: MemoryGraph, seed: u64, long: usize) -> MemoryGraph {
    let items: Vec<EntityId> = g.nodes().filter(|n| n.entity.is_item()).map(|n| n.entity.clone()).collect();
    for (i, id) in items.iter().enumerate() {
        if (seed as usize + i).is_multiple_of(2) {
            let text = "memory ".repeat(long / 7 + i);
            g.apply_memory_update(id, &text, 0).unwrap();
        }
    }
    g
}

pub fn users_of(g: &MemoryGraph) -> Vec<EntityId> {
    g.nodes().filter(|n| n.entity.is_user()).map(|n| n.entity.clone()).collect()
}

/// Pseudo-random similarity features keyed by (seed, user, neighbor).
pub struct HashedSimilarity(pub u64);

impl SimilarityProvider for HashedSimilarity {
    fn similarities(&self, _: &MemoryGraph, user: &EntityId, neighbor: &EntityId) -> (f64, f64) {
        let h = fnv1a64(format!("{}|{user}|{neighbor}", self.0).as_bytes());
        ((h & 0xffff) as f64 / 65_535.0, ((h >> 16) & 0xffff) as f64 / 65_535.0)
    }
}

/// Brute-force pool: member -> (kind of link, latest linking timestamp).
pub fn oracle_pool(g: &MemoryGraph, user: &EntityId) -> BTreeMap<EntityId, Timestamp> {
    let edges = g.edges();
    let history: BTreeSet<&EntityId> = edges.iter().filter(|e| &e.user == user).map(|e| &e.item).collect();
    let mut pool: BTreeMap<EntityId, Timestamp> = BTreeMap::new();
    let mut add = |id: &EntityId, ts: Timestamp| {
        let slot = pool.entry(id.clone()).or_insert(ts);
        *slot = (*slot).max(ts);
    };
    for e in edges.iter().filter(|e| &e.user == user) {
        add(&e.item, e.timestamp);
    }
    let co_users: BTreeSet<&EntityId> =
        edges.iter().filter(|e| &e.user != user && history.contains(&e.item)).map(|e| &e.user).collect();
    for e in edges.iter().filter(|e| co_users.contains(&e.user) && history.contains(&e.item)) {
        add(&e.user, e.timestamp);
    }
    for e in edges.iter().filter(|e| co_users.contains(&e.user) && !history.contains(&e.item)) {
        add(&e.item, e.timestamp);
    }
    pool
}

/// Features recomputed from the raw edge list.
pub fn oracle_features(
    g: &MemoryGraph,
    user: &EntityId,
    neighbor: &EntityId,
    linked_at: Timestamp,
    now: Timestamp,
    sim: &dyn SimilarityProvider,
) -> FeatureVector {
    let edges = g.edges();
    let history: BTreeSet<&EntityId> = edges.iter().filter(|e| &e.user == user).map(|e| &e.item).collect();
    let co_users: BTreeSet<&EntityId> =
        edges.iter().filter(|e| &e.user != user && history.contains(&e.item)).map(|e| &e.user).collect();
    let (edge_weight, co) = if neighbor.kind == EntityKind::User {
        let theirs: BTreeSet<&EntityId> = edges.iter().filter(|e| &e.user == neighbor).map(|e| &e.item).collect();
        (1.0, theirs.intersection(&history).count())
    } else {
        let direct = history.contains(neighbor);
        let linking = edges
            .iter()
            .filter(|e| &e.item == neighbor && if direct { &e.user == user } else { co_users.contains(&e.user) });
        let w = linking.map(|e| e.weight).fold(0.0, f64::max);
        let consumers: BTreeSet<&EntityId> =
            edges.iter().filter(|e| &e.item == neighbor && co_users.contains(&e.user)).map(|e| &e.user).collect();
        (w, consumers.len())
    };
    let (overlap, memory) = sim.similarities(g, user, neighbor);
    FeatureVector {
        edge_weight,
        recency_days: (now - linked_at).max(0) as f64 / 86_400.0,
        co_interaction_count: co as u32,
        metadata_overlap_score: overlap,
        memory_similarity_score: memory,
        neighbor_kind: neighbor.kind,
    }
}

/// Clause-by-clause score written out independently of the rule engine.
pub fn oracle_score(f: &FeatureVector, rules: &RuleSet) -> f64 {
    let value = |feature: &Feature| match feature {
        Feature::EdgeWeight => f.edge_weight,
        Feature::RecencyDays => f.recency_days,
        Feature::CoInteractionCount => f.co_interaction_count as f64,
        Feature::MetadataOverlap => f.metadata_overlap_score,
        Feature::MemorySimilarity => f.memory_similarity_score,
    };
    let mut score = f.edge_weight;
    for rule in &rules.rules {
        for clause in &rule.clauses {
            let fires = match &clause.condition {
                Condition::Always => true,
                Condition::Kind(kind) => *kind == f.neighbor_kind,
                Condition::Compare { feature, cmp, threshold } => {
                    let v = value(feature);
                    match cmp {
                        Comparator::Gt => v > *threshold,
                        Comparator::Ge => v >= *threshold,
                        Comparator::Lt => v < *threshold,
                        Comparator::Le => v <= *threshold,
                    }
                }
            };
            if fires {
                score *= match &clause.action {
                    Action::Multiply(x) | Action::Penalty(x) => *x,
                    Action::RecencyDecay(l) => (-l * f.recency_days).exp(),
                    Action::LinearBoost { feature, alpha } => 1.0 + alpha * value(feature),
                };
            }
        }
    }
    if score < 0.0 {
        0.0
    } else {
        score
    }
}

/// Full-pool score, sort by (score desc, id asc), keep `k`.
pub fn oracle_curate(
    g: &MemoryGraph,
    user: &EntityId,
    rules: &RuleSet,
    k: usize,
    now: Timestamp,
    sim: &dyn SimilarityProvider,
) -> Vec<CuratedMember> {
    let mut scored: Vec<CuratedMember> = oracle_pool(g, user)
        .into_iter()
        .map(|(entity, ts)| {
            let score = oracle_score(&oracle_features(g, user, &entity, ts, now, sim), rules);
            CuratedMember { entity, score }
        })
        .collect();
    // selection sort keeps the oracle free of the library's comparator
    let mut out = Vec::new();
    while out.len() < k && !scored.is_empty() {
        let mut best = 0;
        for j in 1..scored.len() {
            let (a, b) = (&scored[j], &scored[best]);
            if a.score > b.score || (a.score == b.score && a.entity < b.entity) {
                best = j;
            }
        }
        out.push(scored.swap_remove(best));
    }
    out
}
