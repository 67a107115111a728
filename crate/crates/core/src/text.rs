//! Tokenization helpers shared by the mock backend, the hash embedder and the
//! optional token-overlap similarity provider.

use std::collections::BTreeSet;

const STOPWORDS: &[&str] = &[
    "a",
    "about",
    "after",
    "all",
    "also",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "been",
    "but",
    "by",
    "can",
    "could",
    "did",
    "do",
    "does",
    "for",
    "from",
    "had",
    "has",
    "have",
    "he",
    "her",
    "his",
    "how",
    "i",
    "if",
    "in",
    "into",
    "is",
    "it",
    "its",
    "just",
    "like",
    "may",
    "me",
    "more",
    "most",
    "my",
    "no",
    "not",
    "of",
    "on",
    "one",
    "or",
    "other",
    "our",
    "out",
    "over",
    "recent",
    "she",
    "so",
    "some",
    "such",
    "than",
    "that",
    "the",
    "their",
    "them",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "through",
    "to",
    "too",
    "up",
    "very",
    "was",
    "we",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "who",
    "will",
    "with",
    "would",
    "you",
    "your",
    "item",
    "user",
    "book",
    "books",
    "novel",
    "story",
    "read",
    "reader",
    "readers",
    "interest",
    "interests",
    "interaction",
    "interactions",
    "theme",
    "themes",
    "recorded",
    "broad",
    "dominant",
    "without",
    "none",
];

/// Lowercased alphanumeric runs, in order of appearance.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

/// Tokens worth counting as content: not stopwords, at least three characters,
/// not purely numeric.
pub fn content_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    tokens(text).filter(|t| t.chars().count() >= 3 && !is_stopword(t) && !t.chars().all(|c| c.is_ascii_digit()))
}

pub fn content_token_set(text: &str) -> BTreeSet<String> {
    content_tokens(text).collect()
}

/// Jaccard similarity of the content-token sets; 0 when both are empty.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let sa = content_token_set(a);
    let sb = content_token_set(b);
    let union = sa.union(&sb).count();
    if union == 0 {
        return 0.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// Replaces line breaks so a text fits on one prompt line.
pub fn single_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// 64-bit FNV-1a. Stable across processes and platforms.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
