//! Rule DSL for neighbor scoring.
//!
//! A score starts at `edge_weight`; each clause whose condition holds
//! multiplies it by its action's factor. Text form, one clause per line:
//!
//! ```text
//! # domain: books
//! Content Similarity Boost | metadata_overlap_score > 0.6 | multiply 2.5
//! Mild Recency Decay | recency_days > 180 | decay 0.004
//! Memory-Enhanced Ranking | kind = item | boost memory_similarity_score 1.2
//! ```
//!
//! Consecutive lines with the same name form one rule. Model replies may
//! prefix lines with `Rule <n>:`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::features::{FeatureVector, NeighborKind};
use super::CurationError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Feature {
    EdgeWeight,
    RecencyDays,
    CoInteractionCount,
    MetadataOverlap,
    MemorySimilarity,
}

impl Feature {
    pub const ALL: [Feature; 5] = [
        Feature::EdgeWeight,
        Feature::RecencyDays,
        Feature::CoInteractionCount,
        Feature::MetadataOverlap,
        Feature::MemorySimilarity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::EdgeWeight => "edge_weight",
            Feature::RecencyDays => "recency_days",
            Feature::CoInteractionCount => "co_interaction_count",
            Feature::MetadataOverlap => "metadata_overlap_score",
            Feature::MemorySimilarity => "memory_similarity_score",
        }
    }

    pub fn value(self, f: &FeatureVector) -> f64 {
        match self {
            Feature::EdgeWeight => f.edge_weight,
            Feature::RecencyDays => f.recency_days,
            Feature::CoInteractionCount => f.co_interaction_count as f64,
            Feature::MetadataOverlap => f.metadata_overlap_score,
            Feature::MemorySimilarity => f.memory_similarity_score,
        }
    }
}

impl FromStr for Feature {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim().trim_matches('`');
        Feature::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| format!("unknown feature {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    Gt,
    Ge,
    Lt,
    Le,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Lt => "<",
            Comparator::Le => "<=",
        }
    }

    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparator::Gt => lhs > rhs,
            Comparator::Ge => lhs >= rhs,
            Comparator::Lt => lhs < rhs,
            Comparator::Le => lhs <= rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Condition {
    Always,
    Compare { feature: Feature, cmp: Comparator, threshold: f64 },
    Kind(NeighborKind),
}

impl Condition {
    pub fn compare(feature: Feature, cmp: Comparator, threshold: f64) -> Self {
        Condition::Compare { feature, cmp, threshold }
    }

    pub fn holds(&self, f: &FeatureVector) -> bool {
        match self {
            Condition::Always => true,
            Condition::Compare { feature, cmp, threshold } => cmp.holds(feature.value(f), *threshold),
            Condition::Kind(kind) => f.neighbor_kind == *kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Multiply(f64),
    /// `exp(-lambda * recency_days)`.
    RecencyDecay(f64),
    /// `1 + alpha * feature`.
    LinearBoost {
        feature: Feature,
        alpha: f64,
    },
    Penalty(f64),
}

impl Action {
    pub fn factor(&self, f: &FeatureVector) -> f64 {
        match self {
            Action::Multiply(x) | Action::Penalty(x) => *x,
            Action::RecencyDecay(lambda) => (-lambda * f.recency_days).exp(),
            Action::LinearBoost { feature, alpha } => 1.0 + alpha * feature.value(f),
        }
    }

    fn validate(&self) -> Result<(), String> {
        let ok = match self {
            Action::Multiply(x) | Action::Penalty(x) => x.is_finite() && *x > 0.0,
            Action::RecencyDecay(l) => l.is_finite() && *l > 0.0,
            Action::LinearBoost { alpha, .. } => alpha.is_finite() && *alpha >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("action {self} has an out-of-range constant"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub condition: Condition,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub name: String,
    pub clauses: Vec<Clause>,
}

impl Rule {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), clauses: Vec::new() }
    }

    pub fn when(mut self, condition: Condition, action: Action) -> Self {
        self.clauses.push(Clause { condition, action });
        self
    }

    pub fn always(self, action: Action) -> Self {
        self.when(Condition::Always, action)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub domain: String,
    pub rules: Vec<Rule>,
}

impl RuleSet {
    /// Validates constants and non-emptiness.
    pub fn new(domain: impl Into<String>, rules: Vec<Rule>) -> Result<Self, CurationError> {
        let set = Self { domain: domain.into(), rules };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), CurationError> {
        let invalid = |m: String| CurationError::InvalidRuleSet(m);
        if self.rules.is_empty() {
            return Err(invalid("a rule set needs at least one rule".into()));
        }
        for rule in &self.rules {
            if rule.name.trim().is_empty() || rule.name.contains(['|', '\n']) {
                return Err(invalid(format!("bad rule name {:?}", rule.name)));
            }
            if rule.clauses.is_empty() {
                return Err(invalid(format!("rule {:?} has no clauses", rule.name)));
            }
            for clause in &rule.clauses {
                clause.action.validate().map_err(invalid)?;
                if let Condition::Compare { threshold, .. } = clause.condition {
                    if !threshold.is_finite() {
                        return Err(invalid(format!("rule {:?} has a non-finite threshold", rule.name)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn clause_count(&self) -> usize {
        self.rules.iter().map(|r| r.clauses.len()).sum()
    }

    /// Base `edge_weight`, times every firing clause's factor, in order.
    pub fn score(&self, features: &FeatureVector) -> f64 {
        let mut score = features.edge_weight;
        for clause in self.rules.iter().flat_map(|r| &r.clauses) {
            if clause.condition.holds(features) {
                score *= clause.action.factor(features);
            }
        }
        score.max(0.0)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# domain: {}\n", self.domain);
        for rule in &self.rules {
            for clause in &rule.clauses {
                out.push_str(&format!("{} | {} | {}\n", rule.name, clause.condition, clause.action));
            }
        }
        out
    }

    /// Parses the text form. Blank lines and `#` comments are skipped; a
    /// `# domain: <name>` comment sets the domain.
    pub fn from_text(text: &str) -> Result<Self, CurationError> {
        let mut domain = String::from("custom");
        let mut rules: Vec<Rule> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(d) = comment.trim().strip_prefix("domain:") {
                    domain = d.trim().to_string();
                }
                continue;
            }
            let (name, clause) = parse_clause_line(line).map_err(|message| CurationError::RuleParse {
                message: format!("line {}: {message}", idx + 1),
                raw: text.to_string(),
            })?;
            push_clause(&mut rules, name, clause);
        }
        RuleSet::new(domain, rules)
    }
}

pub(crate) fn push_clause(rules: &mut Vec<Rule>, name: String, clause: Clause) {
    match rules.last_mut() {
        Some(last) if last.name == name => last.clauses.push(clause),
        _ => rules.push(Rule { name, clauses: vec![clause] }),
    }
}

fn fmt_num(x: f64) -> String {
    // `{}` on f64 prints the shortest text that parses back to the same value.
    format!("{x}")
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Always => f.write_str("always"),
            Condition::Compare { feature, cmp, threshold } => {
                write!(f, "{} {} {}", feature.name(), cmp.symbol(), fmt_num(*threshold))
            }
            Condition::Kind(NeighborKind::User) => f.write_str("kind = user"),
            Condition::Kind(NeighborKind::Item) => f.write_str("kind = item"),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Multiply(x) => write!(f, "multiply {}", fmt_num(*x)),
            Action::Penalty(x) => write!(f, "penalty {}", fmt_num(*x)),
            Action::RecencyDecay(l) => write!(f, "decay {}", fmt_num(*l)),
            Action::LinearBoost { feature, alpha } => write!(f, "boost {} {}", feature.name(), fmt_num(*alpha)),
        }
    }
}

fn parse_number(s: &str) -> Result<f64, String> {
    let s = s.trim().trim_end_matches(['x', 'X', '×']);
    s.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| format!("expected a number, found {s:?}"))
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("always") {
            return Ok(Condition::Always);
        }
        if let Some(kind) = s.strip_prefix("kind") {
            let kind = kind.trim().trim_start_matches(['=', ' ']).trim();
            return match kind.to_ascii_lowercase().as_str() {
                "user" => Ok(Condition::Kind(NeighborKind::User)),
                "item" => Ok(Condition::Kind(NeighborKind::Item)),
                other => Err(format!("unknown neighbor kind {other:?}")),
            };
        }
        let ops = [
            (">=", Comparator::Ge),
            ("<=", Comparator::Le),
            ("≥", Comparator::Ge),
            ("≤", Comparator::Le),
            (">", Comparator::Gt),
            ("<", Comparator::Lt),
        ];
        for (symbol, cmp) in ops {
            if let Some((lhs, rhs)) = s.split_once(symbol) {
                let feature: Feature = lhs.parse()?;
                return Ok(Condition::compare(feature, cmp, parse_number(rhs)?));
            }
        }
        Err(format!("cannot parse condition {s:?}"))
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut parts = s.split_whitespace();
        let verb = parts.next().ok_or("empty action")?.to_ascii_lowercase();
        let args: Vec<&str> = parts.collect();
        let action = match (verb.as_str(), args.as_slice()) {
            ("multiply", [x]) => Action::Multiply(parse_number(x)?),
            ("penalty", [x]) => Action::Penalty(parse_number(x)?),
            ("decay", [x]) => Action::RecencyDecay(parse_number(x)?),
            ("boost", [feature, alpha]) => {
                Action::LinearBoost { feature: feature.parse()?, alpha: parse_number(alpha)? }
            }
            _ => return Err(format!("cannot parse action {s:?}")),
        };
        action.validate()?;
        Ok(action)
    }
}

/// `[Rule <n>:] <name> | <condition> | <action>`.
pub(crate) fn parse_clause_line(line: &str) -> Result<(String, Clause), String> {
    let line = line.trim().trim_start_matches(['-', '*', ' ']);
    let body = strip_rule_prefix(line);
    let parts: Vec<&str> = body.split('|').map(str::trim).collect();
    let [name, condition, action] = parts.as_slice() else {
        return Err(format!("expected `name | condition | action`, found {line:?}"));
    };
    if name.is_empty() {
        return Err("empty rule name".into());
    }
    Ok((
        name.trim_matches(['*', '"']).trim().to_string(),
        Clause { condition: condition.parse()?, action: action.parse()? },
    ))
}

fn strip_rule_prefix(line: &str) -> &str {
    let lower = line.to_ascii_lowercase();
    if let Some(rest) = lower.strip_prefix("rule") {
        let digits = rest.trim_start().chars().take_while(|c| c.is_ascii_digit()).count();
        if digits > 0 {
            if let Some(colon) = line.find(':') {
                return line[colon + 1..].trim();
            }
        }
    }
    line
}
