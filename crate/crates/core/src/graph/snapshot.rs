//! Line-oriented snapshot format.
//!
//! One JSON object per line, `kind` tag first:
//!
//! ```text
//! {"kind":"meta","format":1,"clock":3}
//! {"kind":"node","entity":"Item-42","title":"Pastworld","text":"...","version":0,"updated_at":0}
//! {"kind":"head","entity":"User-u1","version":0,"updated_at":0,"head":"..."}
//! {"kind":"edge","user":"User-u1","item":"Item-42","weight":5.0,"timestamp":1700000000}
//! {"kind":"end","nodes":1,"edges":1}
//! ```
//!
//! Nodes are written in id order and edges in insertion order, so a fixed
//! graph always produces the same bytes. An empty file is an empty graph;
//! a non-empty file must finish with the `end` record.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EntityId, GraphError, InteractionEdge, MemoryGraph, NodeMemory, Result, VersionHead};

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Record {
    Meta { format: u32, clock: u64 },
    Node(NodeMemory),
    Head { entity: EntityId, version: u64, updated_at: u64, head: String },
    Edge(InteractionEdge),
    End { nodes: usize, edges: usize },
}

impl MemoryGraph {
    pub fn to_snapshot_string(&self) -> String {
        let mut out = Vec::new();
        self.write_snapshot(&mut out).expect("writing to a Vec cannot fail");
        String::from_utf8(out).expect("snapshot is UTF-8")
    }

    pub fn write_snapshot<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut line = |record: &Record| -> std::io::Result<()> {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")
        };
        line(&Record::Meta { format: FORMAT_VERSION, clock: self.clock })?;
        for node in self.nodes.values() {
            line(&Record::Node(node.clone()))?;
        }
        for (entity, heads) in &self.history {
            for head in heads {
                line(&Record::Head {
                    entity: entity.clone(),
                    version: head.version,
                    updated_at: head.updated_at,
                    head: head.head.clone(),
                })?;
            }
        }
        for edge in &self.edges {
            line(&Record::Edge(edge.clone()))?;
        }
        line(&Record::End { nodes: self.nodes.len(), edges: self.edges.len() })
    }

    pub fn snapshot(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = fs::File::create(path)?;
        let mut writer = BufWriter::new(file);
        self.write_snapshot(&mut writer)?;
        writer.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<MemoryGraph> {
        let text = fs::read_to_string(path)?;
        Self::from_snapshot_str(&text)
    }

    pub fn from_snapshot_str(text: &str) -> Result<MemoryGraph> {
        let mut graph = MemoryGraph::new();
        let mut ended = false;
        let mut last_line = 0;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            last_line = line;
            if raw.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| GraphError::Parse { line, message };
            if ended {
                return Err(parse_err("record after end marker".into()));
            }
            let record: Record = serde_json::from_str(raw).map_err(|e| parse_err(e.to_string()))?;
            match record {
                Record::Meta { format, clock } => {
                    if format != FORMAT_VERSION {
                        return Err(parse_err(format!("unsupported snapshot format {format}")));
                    }
                    graph.clock = clock;
                }
                Record::Node(node) => {
                    let entity = node.entity.clone();
                    if !graph.insert_loaded_node(node) {
                        return Err(parse_err(format!("duplicate node {entity}")));
                    }
                }
                Record::Head { entity, version, updated_at, head } => {
                    if !graph.contains(&entity) {
                        return Err(parse_err(format!("history for unknown node {entity}")));
                    }
                    graph.history.entry(entity).or_default().push(VersionHead { version, updated_at, head });
                }
                Record::Edge(edge) => {
                    graph.record_interaction(edge).map_err(|e| parse_err(e.to_string()))?;
                }
                Record::End { nodes, edges } => {
                    if nodes != graph.node_count() || edges != graph.edge_count() {
                        return Err(parse_err(format!(
                            "end marker counts ({nodes} nodes, {edges} edges) do not match records ({} nodes, {} edges)",
                            graph.node_count(),
                            graph.edge_count()
                        )));
                    }
                    ended = true;
                }
            }
        }
        let has_content = text.lines().any(|l| !l.trim().is_empty());
        if has_content && !ended {
            return Err(GraphError::Parse {
                line: last_line,
                message: "missing end marker (truncated snapshot?)".into(),
            });
        }
        Ok(graph)
    }
}
