//! Prompt template registry.
//!
//! Templates ship as text files under `prompts/` and are compiled in. A
//! template uses `{name}` placeholders; `{{` and `}}` are literal braces.
//! Rendering fails on a missing or unexpected variable so a template edit
//! cannot silently drop an input.
//!
//! List-valued inputs are rendered one entry per line as `- <id>: <text>`
//! with the text flattened to a single line. The section helpers at the
//! bottom read those lists back out of a rendered prompt; the mock backend
//! relies on them.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::text::single_line;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PromptId {
    /// Offline rule generation from a domain context.
    MetaRules,
    StageRSynthesis,
    StageReRank,
    StageWPropagation,
    JudgeSystem,
    JudgeUser,
}

impl PromptId {
    pub const ALL: [PromptId; 6] = [
        PromptId::MetaRules,
        PromptId::StageRSynthesis,
        PromptId::StageReRank,
        PromptId::StageWPropagation,
        PromptId::JudgeSystem,
        PromptId::JudgeUser,
    ];

    pub fn template(self) -> &'static str {
        match self {
            PromptId::MetaRules => include_str!("../prompts/meta_rules.txt"),
            PromptId::StageRSynthesis => include_str!("../prompts/stage_r_synthesis.txt"),
            PromptId::StageReRank => include_str!("../prompts/stage_rerank.txt"),
            PromptId::StageWPropagation => include_str!("../prompts/stage_w_propagation.txt"),
            PromptId::JudgeSystem => include_str!("../prompts/judge_system.txt"),
            PromptId::JudgeUser => include_str!("../prompts/judge_user.txt"),
        }
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            PromptId::MetaRules => "meta_rules",
            PromptId::StageRSynthesis => "stage_r_synthesis",
            PromptId::StageReRank => "stage_rerank",
            PromptId::StageWPropagation => "stage_w_propagation",
            PromptId::JudgeSystem => "judge_system",
            PromptId::JudgeUser => "judge_user",
        }
    }

    /// Placeholder names in first-appearance order, deduplicated.
    pub fn placeholders(self) -> Vec<&'static str> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for piece in parse(self.template()) {
            if let Piece::Var(name) = piece {
                if seen.insert(name) {
                    out.push(name);
                }
            }
        }
        out
    }
}

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("template {template} needs variable {name:?}")]
    Missing { template: PromptId, name: String },
    #[error("template {template} has no variable {name:?}")]
    Unexpected { template: PromptId, name: String },
}

enum Piece<'a> {
    Text(&'a str),
    Var(&'a str),
}

fn parse(template: &str) -> Vec<Piece<'_>> {
    let mut pieces = Vec::new();
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        let (text, tail) = rest.split_at(pos);
        if !text.is_empty() {
            pieces.push(Piece::Text(text));
        }
        if let Some(after) = tail.strip_prefix("{{") {
            pieces.push(Piece::Text("{"));
            rest = after;
        } else if let Some(after) = tail.strip_prefix("}}") {
            pieces.push(Piece::Text("}"));
            rest = after;
        } else if let Some(after) = tail.strip_prefix('{') {
            match after.find('}') {
                Some(end) if is_ident(&after[..end]) => {
                    pieces.push(Piece::Var(&after[..end]));
                    rest = &after[end + 1..];
                }
                _ => {
                    pieces.push(Piece::Text("{"));
                    rest = after;
                }
            }
        } else {
            pieces.push(Piece::Text("}"));
            rest = &tail[1..];
        }
    }
    if !rest.is_empty() {
        pieces.push(Piece::Text(rest));
    }
    pieces
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Renders a template. Every placeholder must be supplied and every supplied
/// variable must be used.
pub fn render(id: PromptId, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let names = id.placeholders();
    for (name, _) in vars {
        if !names.contains(name) {
            return Err(PromptError::Unexpected { template: id, name: name.to_string() });
        }
    }
    let mut out = String::with_capacity(id.template().len() + 256);
    for piece in parse(id.template()) {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::Var(name) => {
                let value = vars
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| PromptError::Missing { template: id, name: name.to_string() })?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

pub const EMPTY_LIST: &str = "(none)";

/// One `- <id>: <text>` list line.
pub fn list_line(id: impl fmt::Display, text: &str) -> String {
    format!("- {id}: {}", single_line(text))
}

/// Joins list lines, or [`EMPTY_LIST`] when there are none.
pub fn join_list(lines: impl IntoIterator<Item = String>) -> String {
    let lines: Vec<String> = lines.into_iter().collect();
    if lines.is_empty() {
        EMPTY_LIST.to_string()
    } else {
        lines.join("\n")
    }
}

/// Rendered-prompt anchors used to read sections back.
pub mod anchors {
    pub const R_USER: (&str, &str) = ("Target User: User ", "\n");
    pub const R_USER_MEMORY: (&str, &str) = ("User Memory Summary:\n", "\n\nCollaborative Neighbor Memories:");
    pub const R_NEIGHBORS: (&str, &str) = ("Collaborative Neighbors:\n", "\n\nContext (Candidate Items):");
    pub const R_CANDIDATES: (&str, &str) = ("Candidates to Rank:\n", "\n(Note: These candidates");
    pub const R_N_FACETS: (&str, &str) = ("to identify ", " distinct preference facets");

    pub const RR_INSTRUCTION: (&str, &str) = ("User's Current Request:\n", "\n\nUser Preferences");
    pub const RR_FACETS: (&str, &str) =
        ("we have identified the following preference patterns:\n", "\n\nCandidate Item Memories:");
    pub const RR_CANDIDATES: (&str, &str) = ("Candidate Item Memories:\n", "\n\nYour Task:");

    pub const W_ITEM_INFO: (&str, &str) = ("(clicked) Item ", ".\n");
    pub const W_FACETS: (&str, &str) = ("were identified for this user:\n", "\n\nCurrent Personal Memory of User");
    pub const W_USER_MEMORY: (&str, &str) = ("Current Personal Memory of User ", "\n\nCurrent Memory of Item");
    pub const W_ITEM_MEMORY: (&str, &str) = ("\n\nCurrent Memory of Item ", "\n\nCollaborative Neighbors Available");
    pub const W_NEIGHBORS: (&str, &str) = ("available for potential memory updates:\n", "\n\nYour Task:");

    pub const META_DOMAIN: (&str, &str) = ("- Domain Name: ", "\n");
}

/// Text between the first `start` anchor and the following `end` anchor.
pub fn section<'a>(prompt: &'a str, (start, end): (&str, &str)) -> Option<&'a str> {
    let from = prompt.find(start)? + start.len();
    let len = prompt[from..].find(end)?;
    Some(&prompt[from..from + len])
}

/// Like [`section`], dropping a leading `<header>:\n` line (used where the
/// start anchor ends mid-line).
pub fn section_body<'a>(prompt: &'a str, anchors: (&str, &str)) -> Option<&'a str> {
    let s = section(prompt, anchors)?;
    Some(s.split_once(":\n").map_or(s, |(_, body)| body))
}

/// Parses `- <id>: <text>` lines; other lines are ignored.
pub fn list_entries(section: &str) -> Vec<(String, String)> {
    section
        .lines()
        .filter_map(|line| line.strip_prefix("- "))
        .filter_map(|entry| entry.split_once(": ").or_else(|| entry.strip_suffix(':').map(|id| (id, ""))))
        .map(|(id, text)| (id.trim().to_string(), text.trim().to_string()))
        .collect()
}
