use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::features::NeighborKind;
use super::rules::{Action, Comparator, Condition, Feature, Rule, RuleSet};
use super::CurationError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Books,
    GoodReads,
    MovieTV,
    Yelp,
}

impl Domain {
    pub const ALL: [Domain; 4] = [Domain::Books, Domain::GoodReads, Domain::MovieTV, Domain::Yelp];

    pub fn key(self) -> &'static str {
        match self {
            Domain::Books => "books",
            Domain::GoodReads => "goodreads",
            Domain::MovieTV => "movietv",
            Domain::Yelp => "yelp",
        }
    }

    pub fn context(self) -> DomainContext {
        let ctx = |name: &str, interaction: &str, metadata: &str, characteristics: &str| DomainContext {
            domain_name: name.into(),
            primary_interaction: interaction.into(),
            key_metadata: metadata.into(),
            characteristics: characteristics.into(),
        };
        match self {
            Domain::Books => ctx(
                "InstructRec-Books",
                "Explicit ratings with text-based preference instructions. Example: \"I love fantasy novels with strong female protagonists\"",
                "title, description (genre hints, author info)",
                "Content-driven, stable preferences, sparse interactions.",
            ),
            Domain::GoodReads => ctx(
                "InstructRec-GoodReads",
                "Explicit ratings in a social reading context.",
                "title (series info), description.",
                "Very dense graph (avg 52.7 books/user), strong community effects, series-aware reading.",
            ),
            Domain::MovieTV => ctx(
                "InstructRec-MovieTV",
                "Explicit ratings with viewing preferences.",
                "title, description (Plot, Cast).",
                "Sparse graph, recency matters (trending content), volatile preferences.",
            ),
            Domain::Yelp => ctx(
                "InstructRec-Yelp",
                "Star ratings and visits to local businesses.",
                "categories (Cuisine), attributes (Price, WiFi).",
                "Context-rich but sparse. Strong categorical constraints (cuisine/price/location). Recency is critical.",
            ),
        }
    }

    /// Domain whose context uses `domain_name`.
    pub fn from_domain_name(name: &str) -> Option<Domain> {
        Domain::ALL.into_iter().find(|d| d.context().domain_name == name.trim())
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        let norm = norm.strip_prefix("instructrec").unwrap_or(&norm);
        match norm {
            "books" | "book" => Ok(Domain::Books),
            "goodreads" => Ok(Domain::GoodReads),
            "movietv" | "movies" | "movie" => Ok(Domain::MovieTV),
            "yelp" => Ok(Domain::Yelp),
            _ => Err(format!("unknown domain {s:?} (expected books, goodreads, movietv or yelp)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainContext {
    pub domain_name: String,
    pub primary_interaction: String,
    pub key_metadata: String,
    pub characteristics: String,
}

impl DomainContext {
    pub fn validate(&self) -> Result<(), CurationError> {
        let fields = [
            ("domain_name", &self.domain_name),
            ("primary_interaction", &self.primary_interaction),
            ("key_metadata", &self.key_metadata),
            ("characteristics", &self.characteristics),
        ];
        match fields.iter().find(|(_, v)| v.trim().is_empty()) {
            Some((name, _)) => Err(CurationError::InvalidContext(format!("{name} is empty"))),
            None => Ok(()),
        }
    }
}

fn cmp(feature: Feature, cmp: Comparator, threshold: f64) -> Condition {
    Condition::compare(feature, cmp, threshold)
}

fn boost(feature: Feature, alpha: f64) -> Action {
    Action::LinearBoost { feature, alpha }
}

use Action::{Multiply, Penalty, RecencyDecay};
use Comparator::{Ge, Gt, Lt};
use Feature::{
    CoInteractionCount as Co, MemorySimilarity as MemSim, MetadataOverlap as Overlap, RecencyDays as Recency,
};

pub fn builtin_ruleset(domain: Domain) -> RuleSet {
    let rules = match domain {
        Domain::Books => vec![
            Rule::new("Content Similarity Boost").when(cmp(Overlap, Gt, 0.6), Multiply(2.5)),
            Rule::new("Collaborative Filtering with Threshold")
                .when(cmp(Co, Gt, 3.0), Multiply(1.8))
                .when(cmp(MemSim, Gt, 0.5), Multiply(1.5)),
            Rule::new("Mild Recency Decay").when(cmp(Recency, Gt, 180.0), RecencyDecay(0.004)),
            Rule::new("Memory-Enhanced Ranking")
                .when(Condition::Kind(NeighborKind::Item), boost(MemSim, 1.2))
                .when(Condition::Kind(NeighborKind::User), boost(MemSim, 0.8)),
        ],
        Domain::GoodReads => vec![
            Rule::new("High Co-interaction Boost")
                .when(cmp(Co, Gt, 10.0), Multiply(2.0))
                .when(cmp(Co, Gt, 10.0), Multiply(1.5)),
            Rule::new("Series Detection").when(cmp(Overlap, Gt, 0.8), Multiply(3.0)),
            Rule::new("Social Signal Priority")
                .when(cmp(Co, Gt, 15.0), Multiply(0.7))
                .when(cmp(Co, Gt, 15.0), Multiply(1.5)),
            Rule::new("Minimal Recency Decay").when(cmp(Recency, Gt, 365.0), RecencyDecay(0.002)),
            Rule::new("Memory Amplification").when(cmp(Co, Gt, 10.0), boost(MemSim, 1.8)),
        ],
        Domain::MovieTV => vec![
            Rule::new("Strong Recency Decay")
                .when(cmp(Recency, Gt, 60.0), RecencyDecay(0.018))
                .when(cmp(Recency, Gt, 180.0), RecencyDecay(0.025)),
            Rule::new("Metadata Compensation").when(cmp(Co, Lt, 3.0), Multiply(2.8)),
            Rule::new("Rare CF Signal Boost")
                .when(cmp(Co, Ge, 3.0), Multiply(2.5))
                .when(cmp(Co, Ge, 3.0), Multiply(1.8)),
            Rule::new("Memory-Guided Ranking").always(boost(MemSim, 1.5)).when(cmp(Overlap, Gt, 0.6), Multiply(0.5)),
            Rule::new("Recency Threshold Filter").when(cmp(Recency, Gt, 365.0), Penalty(0.3)),
        ],
        Domain::Yelp => vec![
            Rule::new("Categorical Dominance")
                .when(cmp(Overlap, Gt, 0.7), Multiply(3.5))
                .when(cmp(Overlap, Gt, 0.85), Multiply(4.5)),
            Rule::new("Very Strong Recency Decay")
                .when(cmp(Recency, Gt, 90.0), RecencyDecay(0.028))
                .when(cmp(Recency, Gt, 180.0), Penalty(0.5)),
            Rule::new("Attribute-Aware Memory").when(cmp(Overlap, Gt, 0.85), Multiply(2.2)),
            Rule::new("Sparse CF Handling").when(cmp(Co, Ge, 2.0), Multiply(2.0)).when(cmp(Co, Lt, 2.0), Penalty(0.5)),
            Rule::new("Location/Price Filter").when(cmp(Overlap, Lt, 0.4), Penalty(0.2)),
        ],
    };
    RuleSet { domain: domain.key().to_string(), rules }
}

/// Domain-blind fallback: one unconditioned recency decay.
pub fn generic_ruleset() -> RuleSet {
    RuleSet { domain: "generic".into(), rules: vec![Rule::new("Generic Recency Decay").always(RecencyDecay(0.01))] }
}
