//! Multi-threaded scenarios over the shared graph and update queue; each
//! panics on a violated invariant.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use super::{iid, stage_w_user, uid};
use memrec_core::curation::{builtin_ruleset, curate, ConstantSimilarity, Domain};
use memrec_core::gateway::{BackendReply, CallKind, FnBackend, Gateway, MockBackend, Stage};
use memrec_core::graph::{EntityId, GraphError, InteractionEdge, MemoryGraph, SharedGraph};
use memrec_core::propagation::{InteractionEvent, UpdateQueue, Worker};

const SEED_TEXT: &str = "seed memory.";

/// `users` users, each with `per_user` items of their own (no shared items).
fn disjoint_graph(users: usize, per_user: usize) -> MemoryGraph {
    let mut g = MemoryGraph::new();
    for u in 0..users {
        g.upsert_node(uid(u), SEED_TEXT).unwrap();
        for j in 0..per_user {
            let item = iid(u * per_user + j);
            g.upsert_item(item.clone(), &format!("Title {u}-{j}"), "A dragon and a castle.").unwrap();
            g.record_interaction(InteractionEdge::new(uid(u), item, 4.0, (u * 100 + j) as i64)).unwrap();
        }
    }
    g
}

fn events(graph: &SharedGraph, count: usize) -> Vec<InteractionEvent> {
    let g = graph.read();
    let edges: Vec<(EntityId, EntityId)> = g.edges().iter().map(|e| (e.user.clone(), e.item.clone())).collect();
    (0..count)
        .map(|n| {
            let (user, item) = &edges[(n * 7) % edges.len()];
            let curated =
                curate(&g, user, &builtin_ruleset(Domain::Books), 4, 10_000, &ConstantSimilarity::default()).unwrap();
            InteractionEvent::capture(&g, user, item, None, curated, 0).unwrap()
        })
        .collect()
}

/// Stage-W replies carrying large self-describing texts, so a torn read
/// would be detectable.
fn framed_backend() -> FnBackend {
    let counter = AtomicUsize::new(0);
    FnBackend::new(move |_| {
        let n = counter.fetch_add(1, Ordering::SeqCst);
        let frame = |tag: &str| {
            let payload = tag.repeat(4000 + n % 97);
            format!("BEGIN {} {payload} END", payload.len())
        };
        let reply = serde_json::json!({"user_memory": frame("u"), "item_memory": frame("i"), "neighbor_updates": []});
        Ok(BackendReply { text: reply.to_string(), usage: None })
    })
}

fn is_complete(text: &str) -> bool {
    if text == SEED_TEXT || text == "A dragon and a castle." {
        return true;
    }
    let Some(body) = text.strip_prefix("BEGIN ").and_then(|t| t.strip_suffix(" END")) else { return false };
    let Some((len, payload)) = body.split_once(' ') else { return false };
    len.parse::<usize>().ok() == Some(payload.len()) && payload.chars().all(|c| c == payload.chars().next().unwrap())
}

fn assert_gap_free(g: &MemoryGraph) {
    for node in g.nodes() {
        let versions: Vec<u64> = g.history(&node.entity).iter().map(|h| h.version).collect();
        assert_eq!(versions, (0..node.version).collect::<Vec<_>>(), "{}", node.entity);
    }
}

pub fn readers_never_see_partial_memories_during_drain() {
    let shared = SharedGraph::new(disjoint_graph(8, 3));
    let all = events(&shared, 200);
    let queue = Arc::new(UpdateQueue::new());
    let background = Worker::new(shared.clone(), Gateway::standalone(framed_backend())).spawn(Arc::clone(&queue));
    let done = Arc::new(AtomicBool::new(false));
    let readers: Vec<_> = (0..4)
        .map(|r| {
            let (graph, done) = (shared.clone(), Arc::clone(&done));
            thread::spawn(move || {
                let mut reads = 0usize;
                while !done.load(Ordering::SeqCst) || reads == 0 {
                    if r % 2 == 0 {
                        for node in graph.read().nodes() {
                            assert!(is_complete(&node.text), "torn text at {}", node.entity);
                            reads += 1;
                        }
                    } else {
                        let node = graph.node(&uid(reads % 8)).unwrap();
                        assert!(is_complete(&node.text), "torn text at {}", node.entity);
                        reads += 1;
                    }
                }
                reads
            })
        })
        .collect();
    let mut per_user: BTreeMap<EntityId, u64> = BTreeMap::new();
    for event in all {
        *per_user.entry(event.user.clone()).or_default() += 1;
        queue.enqueue(event);
    }
    queue.wait_idle();
    done.store(true, Ordering::SeqCst);
    background.shutdown();
    for reader in readers {
        assert!(reader.join().unwrap() > 0);
    }
    assert_eq!((queue.applied(), queue.failed()), (200, 0));
    let g = shared.snapshot_clone();
    for (user, n) in per_user {
        assert_eq!(g.node(&user).unwrap().version, n, "{user}");
    }
    assert_gap_free(&g);
    assert!(g.check_integrity());
}

pub fn parallel_workers_keep_versions_gap_free() {
    let shared = SharedGraph::new(disjoint_graph(4, 2));
    let all = Arc::new(events(&shared, 120));
    let worker = Worker::new(shared.clone(), Gateway::standalone(framed_backend()));
    let next = Arc::new(AtomicUsize::new(0));
    let outcomes: Arc<Mutex<Vec<(EntityId, EntityId, bool)>>> = Arc::default();
    let threads: Vec<_> = (0..6)
        .map(|_| {
            let (worker, all, next, outcomes) =
                (worker.clone(), Arc::clone(&all), Arc::clone(&next), Arc::clone(&outcomes));
            thread::spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(event) = all.get(i) else { break };
                let ok = worker.process(event);
                outcomes.lock().unwrap().push((event.user.clone(), event.item.clone(), ok));
            })
        })
        .collect();
    threads.into_iter().for_each(|t| t.join().unwrap());

    // every accepted write is one version step; nothing else moved a version
    let mut expected: BTreeMap<EntityId, u64> = BTreeMap::new();
    for (user, item, ok) in outcomes.lock().unwrap().iter() {
        if *ok {
            *expected.entry(user.clone()).or_default() += 1;
            *expected.entry(item.clone()).or_default() += 1;
        }
    }
    let g = shared.snapshot_clone();
    for node in g.nodes() {
        assert_eq!(node.version, expected.get(&node.entity).copied().unwrap_or(0), "{}", node.entity);
        assert!(is_complete(&node.text));
    }
    assert_gap_free(&g);
}

pub fn injected_stale_writes_lose_no_updates() {
    let shared = SharedGraph::new(disjoint_graph(5, 2));
    let injected: Arc<Mutex<Vec<(String, String)>>> = Arc::default();
    let (graph, log) = (shared.clone(), Arc::clone(&injected));
    let counter = AtomicUsize::new(0);
    // Between the worker's read and its write, another writer updates the
    // user through the public versioned API.
    let backend = FnBackend::wrap(MockBackend::new(0), move |req| {
        if req.stage != Stage::StageW || req.kind != CallKind::Primary {
            return;
        }
        let user = EntityId::user(stage_w_user(&req.user)).unwrap();
        let marker = format!("Injected-{}.", counter.fetch_add(1, Ordering::SeqCst));
        let node = graph.node(&user).unwrap();
        graph.apply_memory_update(&user, &format!("{} {marker}", node.text), node.version).unwrap();
        log.lock().unwrap().push((user.id.clone(), marker));
    });
    let gw = Gateway::standalone(backend);
    let queue = UpdateQueue::new();
    let all = events(&shared, 40);
    let mut per_user: BTreeMap<String, u64> = BTreeMap::new();
    for event in all {
        *per_user.entry(event.user.id.clone()).or_default() += 1;
        queue.enqueue(event);
    }
    let stats = Worker::new(shared.clone(), gw.clone()).drain(&queue);
    assert_eq!((stats.applied, stats.failed), (40, 0));
    // each event: one primary call that went stale, one retry that applied
    assert_eq!(gw.ledger().stage_total(Stage::StageW).calls, 40);
    assert_eq!(gw.ledger().stage_total(Stage::StageW).retries, 40);

    let g = shared.snapshot_clone();
    let injected = injected.lock().unwrap();
    assert_eq!(injected.len(), 40);
    for (user, marker) in injected.iter() {
        assert!(g.node(&EntityId::user(user).unwrap()).unwrap().text.contains(marker.as_str()), "{user} lost {marker}");
    }
    for (user, n) in per_user {
        assert_eq!(g.node(&EntityId::user(&user).unwrap()).unwrap().version, 2 * n, "{user}");
    }
    assert_gap_free(&g);
}

pub fn concurrent_writers_and_worker_account_for_every_write() {
    let shared = SharedGraph::new(disjoint_graph(3, 2));
    let queue = Arc::new(UpdateQueue::new());
    let background = Worker::new(shared.clone(), Gateway::standalone(MockBackend::new(0))).spawn(Arc::clone(&queue));
    let writers: Vec<_> = (0..3)
        .map(|w| {
            let graph = shared.clone();
            thread::spawn(move || {
                let mut markers = Vec::new();
                for n in 0..30 {
                    let user = uid((w + n) % 3);
                    let marker = format!("Writer-{w}-{n}.");
                    // optimistic loop: re-read on a stale version
                    loop {
                        let node = graph.node(&user).unwrap();
                        match graph.apply_memory_update(&user, &format!("{} {marker}", node.text), node.version) {
                            Ok(_) => break,
                            Err(GraphError::StaleWrite { .. }) => continue,
                            Err(e) => panic!("{e}"),
                        }
                    }
                    markers.push((user, marker));
                }
                markers
            })
        })
        .collect();
    let all = events(&shared, 60);
    let mut per_user: BTreeMap<EntityId, u64> = BTreeMap::new();
    for event in &all {
        *per_user.entry(event.user.clone()).or_default() += 1;
    }
    for event in all {
        queue.enqueue(event);
    }
    let markers: Vec<(EntityId, String)> = writers.into_iter().flat_map(|t| t.join().unwrap()).collect();
    queue.wait_idle();
    background.shutdown();

    assert_eq!(queue.applied() + queue.failed(), 60);
    let g = shared.snapshot_clone();
    for (user, marker) in &markers {
        assert!(g.node(user).unwrap().text.contains(marker.as_str()), "{user} lost {marker}");
    }
    // Failed events never wrote, so versions split exactly into writer
    // updates plus applied events.
    let writes_per_user = markers.len() as u64 / 3;
    let applied: u64 = per_user.keys().map(|u| g.node(u).unwrap().version - writes_per_user).sum();
    assert_eq!(applied, queue.applied());
    assert_gap_free(&g);
}
