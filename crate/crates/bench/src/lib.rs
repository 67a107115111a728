//! Synthetic graphs and events for the benchmarks.

use memrec_core::curation::{builtin_ruleset, curate, ConstantSimilarity, Domain};
use memrec_core::eval::EvalCase;
use memrec_core::graph::{EntityId, InteractionEdge, MemoryGraph};
use memrec_core::propagation::InteractionEvent;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 12] = [
    "dragon",
    "castle",
    "detective",
    "murder",
    "planet",
    "starship",
    "romance",
    "war",
    "empire",
    "magic",
    "ocean",
    "robot",
];

pub fn user(i: usize) -> EntityId {
    EntityId::user(format!("u{i}")).unwrap()
}

pub fn item(i: usize) -> EntityId {
    EntityId::item(format!("i{i}")).unwrap()
}

/// `users` users each rating `per_user` of `items` items at random.
pub fn synthetic_graph(users: usize, items: usize, per_user: usize, seed: u64) -> MemoryGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = MemoryGraph::new();
    for u in 0..users {
        g.upsert_node(user(u), "Reads a bit of everything.").unwrap();
    }
    for i in 0..items {
        let words: Vec<&str> = (0..12).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
        g.upsert_item(item(i), &format!("Title {i}"), &words.join(" ")).unwrap();
    }
    for u in 0..users {
        for _ in 0..per_user {
            let edge = InteractionEdge::new(
                user(u),
                item(rng.random_range(0..items)),
                f64::from(rng.random_range(1..=5u32)),
                rng.random_range(0..365 * 86_400),
            );
            g.record_interaction(edge).unwrap();
        }
    }
    g
}

/// An event for `u` clicking item `i`, with a Books neighborhood of `k`.
pub fn event(g: &MemoryGraph, u: usize, i: usize, k: usize) -> InteractionEvent {
    let now = g.latest_timestamp().unwrap_or(0);
    let curated = curate(g, &user(u), &builtin_ruleset(Domain::Books), k, now, &ConstantSimilarity::default()).unwrap();
    InteractionEvent::capture(g, &user(u), &item(i), None, curated, now).unwrap()
}

/// A ranking case over `n` random candidates, the first being the truth.
pub fn case(u: usize, items: usize, n: usize, seed: u64) -> EvalCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates: Vec<EntityId> = Vec::new();
    while candidates.len() < n.min(items) {
        let c = item(rng.random_range(0..items));
        if !candidates.contains(&c) {
            candidates.push(c);
        }
    }
    EvalCase {
        case_id: format!("bench-{u}"),
        user: user(u),
        instruction: "Something with dragons and magic".into(),
        ground_truth: candidates[0].clone(),
        candidates,
    }
}
