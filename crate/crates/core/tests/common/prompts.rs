//! Prompts rendered for the first fixture case.

use memrec_core::curation::{builtin_ruleset, curate, meta_prompt, ConstantSimilarity, Domain};
use memrec_core::gateway::{Gateway, MockBackend};
use memrec_core::graph::{EntityId, MemoryGraph};
use memrec_core::propagation::{render_propagation_prompt, InteractionEvent, MemoryView};
use memrec_core::rerank::{render_rerank_prompt, Grounding, RecommendationRequest};
use memrec_core::stage_r::{render_synthesis_prompt, represent_neighbors, synthesize, CollabMemory};
use memrec_core::EvalCase;

use super::books_fixture;

pub struct Rendered {
    pub meta: String,
    pub stage_r: String,
    pub rerank: String,
    pub stage_w: String,
}

fn first_case() -> (MemoryGraph, EvalCase) {
    let (graph, mut cases) = books_fixture();
    (graph, cases.remove(0))
}

pub fn render_all() -> Rendered {
    let (graph, case) = first_case();
    let gw = Gateway::standalone(MockBackend::new(42));
    let now = graph.latest_timestamp().unwrap();
    let curated =
        curate(&graph, &case.user, &builtin_ruleset(Domain::Books), 16, now, &ConstantSimilarity::default()).unwrap();
    let reps = represent_neighbors(&curated, &graph, 1800, 3).unwrap();
    let titles: Vec<(EntityId, String)> =
        case.candidates.iter().map(|id| (id.clone(), graph.node(id).unwrap().display_title().to_string())).collect();
    let user_memory = graph.node(&case.user).unwrap().text.clone();
    let stage_r = render_synthesis_prompt(&case.user, &user_memory, &reps, &titles, 7).unwrap();
    let collab: CollabMemory = synthesize(&case.user, &user_memory, &reps, &titles, 7, &curated, &gw, now).unwrap();
    let request = RecommendationRequest {
        user: case.user.clone(),
        instruction: case.instruction.clone(),
        candidates: case.candidates.iter().map(|id| (id.clone(), graph.node(id).unwrap().text.clone())).collect(),
    };
    let rerank = render_rerank_prompt(&request, Grounding::Collaborative(&collab)).unwrap();
    let event = InteractionEvent::capture(&graph, &case.user, &case.ground_truth, Some(collab), curated, now).unwrap();
    let view = MemoryView::read(&graph, &event).unwrap();
    let stage_w = render_propagation_prompt(&event, &view, &view.neighbors).unwrap();
    Rendered { meta: meta_prompt(&Domain::Books.context()).unwrap(), stage_r, rerank, stage_w }
}

/// True while `text` still holds a `{name}` placeholder.
pub fn has_placeholder(text: &str) -> bool {
    text.split('{').skip(1).any(|rest| {
        rest.split_once('}')
            .is_some_and(|(name, _)| !name.is_empty() && name.chars().all(|c| c.is_ascii_lowercase() || c == '_'))
    })
}

impl Rendered {
    /// (golden file, rendered text, phrase the prompt must carry).
    pub fn parts(&self) -> [(&'static str, &str, &'static str); 4] {
        [
            ("prompts/meta_rules_books.txt", &self.meta, "OUTPUT FORMAT"),
            ("prompts/stage_r_books-01.txt", &self.stage_r, "do not score them"),
            ("prompts/stage_rerank_books-01.txt", &self.rerank, "relevance score between 0 and 1"),
            ("prompts/stage_w_books-01.txt", &self.stage_w, "neighbor_updates"),
        ]
    }
}
