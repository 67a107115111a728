//! Malformed model replies and a harness that feeds one reply script to
//! every stage that parses model output.

use std::collections::BTreeSet;

use memrec_core::curation::{
    builtin_ruleset, curate, generate_ruleset, ConstantSimilarity, CuratedNeighborhood, Domain,
};
use memrec_core::eval::{judge_rationales, JudgeItem};
use memrec_core::gateway::{CallKind, Gateway, ScriptedBackend};
use memrec_core::graph::{EntityId, InteractionEdge, MemoryGraph};
use memrec_core::propagation::{propagate, InteractionEvent, MemoryView};
use memrec_core::rerank::{rerank_llm, Grounding, RecommendationRequest};
use memrec_core::stage_r::{represent_neighbors, synthesize};

fn rerank_row(id: &str, score: &str) -> String {
    format!(r#"{{"scores": [{{"item_id": {id}, "score": {score}}}]}}"#)
}

fn facet(text: &str, confidence: &str, cites: &str) -> String {
    format!(r#"{{"facets": [{{"facet": {text}, "confidence": {confidence}, "supporting_neighbors": {cites}}}]}}"#)
}

/// A reply every structured stage accepts, followed by one rule line.
pub const WELL_FORMED: &str = r#"{
  "scores": [{"item_id": "Item-a", "score": 0.9, "rationale": "dragons"}],
  "facets": [{"facet": "Likes dragons", "confidence": 0.8, "supporting_neighbors": ["Item-a"]}],
  "user_memory": "Reads fantasy and dragons.",
  "item_memory": "Ships.",
  "neighbor_updates": [],
  "model_a": {"specificity": 4, "relevance": 4, "factuality": 5},
  "model_b": {"specificity": 3, "relevance": 3, "factuality": 3},
  "model_c": {"specificity": 2, "relevance": 2, "factuality": 2}
}
Strong Ties | edge_weight > 3 | multiply 2"#;

pub fn malformed_replies() -> Vec<String> {
    let mut out: Vec<String> = [
        // empty, prose and non-objects
        "",
        "   \n\t",
        "I'm sorry, I can't help with that.",
        "null",
        "42",
        "\"just a string\"",
        "[]",
        "[{\"scores\": []}]",
        // broken fences and truncation
        "```json\n```",
        "```json\n{\"scores\": [\n```",
        "{",
        "}",
        "{\"a\": \"unterminated}",
        "{\"scores\": [{\"item_id\": \"Item-a\", \"score\": 0.5},]}",
        "{'scores': [{'item_id': 'Item-a', 'score': 0.5}]}",
        "\u{feff}{\"scores\": [{\"item_id\": \"Item-a\", \"score\": 0.5}]}",
        "Sure! Here is the JSON:\n```json\n{\"scores\": [{\"item_id\": \"Item-a\", \"score\": 0.9}]}\n```\nLet me know.",
        "{}",
        // rerank shape violations
        "{\"scores\": null}",
        "{\"scores\": [1, 2, 3]}",
        "{\"scores\": [{\"item_id\": \"Item-a\"}]}",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    out.extend([
        rerank_row("\"Item-a\"", "7.5"),
        rerank_row("\"Item-a\"", "-3"),
        rerank_row("\"Item-zzz\"", "0.5"),
        rerank_row("true", "0.5"),
        rerank_row("\"Item-a\"", "\"0.9\""),
        rerank_row("\"Item-a\"", "1e400"),
        // stage-r shape and range violations
        "{\"facets\": []}".into(),
        "{\"facets\": \"many\"}".into(),
        facet("\"\"", "0.5", "[]"),
        facet("\"x\"", "1.5", "[\"Item-a\"]"),
        facet("\"x\"", "-0.1", "[\"Item-a\"]"),
        facet("\"x\"", "0.5", "[\"User-ghost\"]"),
        facet("12", "0.5", "[]"),
        facet("\"x\"", "0.5", "[3.7]"),
        facet("\"x\"", "0.5", "\"Item-a\""),
        "{\"facets\": [{\"facet\": \"x\", \"confidence\": 0.5}]}".into(),
        "{\"facets\": [{\"facet\": \"x\", \"confidence\": 0.5, \"supporting_neighbors\": [\"Item-a\"]}], \
          \"support_edges\": [{\"from\": \"Item-a\", \"to\": \"User-nobody\", \"w\": 9}]}"
            .into(),
        // stage-w shape and content violations
        "{\"user_memory\": \"x\"}".into(),
        "{\"user_memory\": null, \"item_memory\": \"y\"}".into(),
        "{\"user_memory\": \"\", \"item_memory\": \"  \"}".into(),
        "{\"user_memory\": \"x\", \"item_memory\": \"y\", \"neighbor_updates\": {\"a\": 1}}".into(),
        "{\"user_memory\": \"x\", \"item_memory\": \"y\", \"neighbor_updates\": [{\"neighbor_id\": \"User-ghost\", \"memory_update\": \"z\"}]}".into(),
        // judge verdicts
        "{\"model_a\": {\"specificity\": 9, \"relevance\": 3, \"factuality\": 3}}".into(),
        "{\"model_a\": {\"specificity\": 2.5, \"relevance\": 3, \"factuality\": 3}, \"model_b\": {}, \"model_c\": {}}".into(),
        // rule lines
        "Rule | edge_weight >> 3 | multiply 2".into(),
        "Rule | edge_weight > 3 | explode 2".into(),
        "| | |".into(),
        // pathological nesting and unicode
        format!("{{\"scores\": {}", "[".repeat(5000)),
        "\u{0}\u{ffff}{{{{ \u{1F600} }}}}".into(),
    ]);
    out
}

/// What one stage made of a reply script.
#[derive(Debug)]
pub struct StageOutcome {
    pub stage: &'static str,
    /// `Ok(true)` when the stage produced a result after a repair round-trip.
    pub result: Result<bool, String>,
}

struct Scene {
    graph: MemoryGraph,
    user: EntityId,
    item: EntityId,
    curated: CuratedNeighborhood,
}

fn scene() -> Scene {
    let id = |s: &str| -> EntityId { s.parse().unwrap() };
    let mut graph = MemoryGraph::new();
    for u in ["User-u", "User-v"] {
        graph.upsert_node(id(u), "Reads fantasy.").unwrap();
    }
    for (i, text) in [("Item-a", "Dragons."), ("Item-b", "Wizards."), ("Item-c", "Ships.")] {
        graph.upsert_item(id(i), i, text).unwrap();
    }
    for (u, i) in [("User-u", "Item-a"), ("User-v", "Item-a"), ("User-v", "Item-b")] {
        graph.record_interaction(InteractionEdge::new(id(u), id(i), 4.0, 10)).unwrap();
    }
    let user = id("User-u");
    let curated =
        curate(&graph, &user, &builtin_ruleset(Domain::Books), 16, 10, &ConstantSimilarity::default()).unwrap();
    Scene { graph, user, item: id("Item-c"), curated }
}

fn gateway(script: &[String]) -> Gateway {
    Gateway::standalone(ScriptedBackend::new(script.iter().cloned()))
}

fn repaired(gw: &Gateway) -> bool {
    gw.ledger().rows().iter().any(|r| r.entry.retries > 0)
}

/// Runs rule generation, Stage-R, rerank, Stage-W and the judge, each on a
/// fresh gateway replaying `script`, and checks the invariants of every
/// result that does come back.
pub fn exercise_all_stages(script: &[String]) -> Vec<StageOutcome> {
    let s = scene();
    let mut out = Vec::new();

    let gw = gateway(script);
    let result = generate_ruleset(&Domain::Books.context(), &gw).map(|rules| {
        assert!(!rules.rules.is_empty());
        false
    });
    out.push(StageOutcome { stage: "rule-gen", result: result.map_err(|e| e.to_string()) });

    let gw = gateway(script);
    let reps = represent_neighbors(&s.curated, &s.graph, 1800, 3).unwrap();
    let result = synthesize(&s.user, "Reads fantasy.", &reps, &[], 3, &s.curated, &gw, 10).map(|collab| {
        let allowed: BTreeSet<&EntityId> = s.curated.ids().collect();
        assert!(!collab.facets.is_empty() && collab.facets.len() <= 3);
        for f in &collab.facets {
            assert!((0.0..=1.0).contains(&f.confidence) && !f.text.trim().is_empty());
            assert!(f.supporting_neighbors.iter().all(|n| allowed.contains(n)));
        }
        for e in &collab.support_edges {
            assert!((0.0..=1.0).contains(&e.w) && e.to == s.user && allowed.contains(&e.from));
        }
        repaired(&gw)
    });
    out.push(StageOutcome { stage: "stage-r", result: result.map_err(|e| e.to_string()) });

    let gw = gateway(script);
    let req = RecommendationRequest {
        user: s.user.clone(),
        instruction: "something with dragons".into(),
        candidates: ["Item-a", "Item-b", "Item-c"].iter().map(|i| (i.parse().unwrap(), format!("{i} text"))).collect(),
    };
    let result = rerank_llm(&req, Grounding::PersonalOnly("Reads fantasy."), &gw).map(|ranked| {
        let mut got: Vec<&EntityId> = ranked.items().collect();
        got.sort();
        assert_eq!(got, req.candidates.iter().map(|(id, _)| id).collect::<Vec<_>>());
        assert!(ranked.entries.iter().all(|e| (0.0..=1.0).contains(&e.score)));
        assert!(ranked.entries.windows(2).all(|w| w[0].score >= w[1].score));
        repaired(&gw)
    });
    out.push(StageOutcome { stage: "rerank", result: result.map_err(|e| e.to_string()) });

    let gw = gateway(script);
    let event = InteractionEvent::capture(&s.graph, &s.user, &s.item, None, s.curated.clone(), 10).unwrap();
    let view = MemoryView::read(&s.graph, &event).unwrap();
    let result = propagate(&event, &view, &gw, CallKind::Primary).map(|r| {
        assert!(!r.user_memory.is_empty() && !r.item_memory.is_empty());
        let allowed: BTreeSet<&EntityId> = view.neighbors.iter().map(|(id, _, _)| id).collect();
        assert!(r.neighbor_updates.iter().all(|u| allowed.contains(&u.neighbor) && !u.memory_update.is_empty()));
        repaired(&gw)
    });
    out.push(StageOutcome { stage: "stage-w", result: result.map_err(|e| e.to_string()) });

    let gw = gateway(script);
    let item = JudgeItem {
        user_summary: "Reads fantasy.".into(),
        item_title: "Ships".into(),
        rationale_a: "a".into(),
        rationale_b: "b".into(),
        rationale_c: "c".into(),
    };
    let result = judge_rationales(&[item], &gw).map(|report| {
        assert_eq!(report.judged + report.skipped, 1);
        repaired(&gw)
    });
    out.push(StageOutcome { stage: "judge", result: result.map_err(|e| e.to_string()) });
    out
}
