//! Pipeline configuration (TOML).
//!
//! ```toml
//! k = 16
//! n_facets = 7
//! token_budget = 1800
//! domain = "books"
//!
//! [ablation]
//! collab_read = true
//! llm_curation = true
//! collab_write = true
//!
//! [backends.mem]
//! kind = "mock"
//! seed = 0
//!
//! [backends.rec]
//! kind = "remote-chat"
//! endpoint = "https://api.example.com/v1"
//! api_key_env = "OPENAI_API_KEY"
//! model = "gpt-4o-mini"
//! ```
//!
//! Credentials are never read from the file; `api_key_env` names the
//! environment variable that holds the key.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curation::{ConstantSimilarity, Domain, SimilarityProvider, TokenOverlapSimilarity};
use crate::gateway::{
    Backend, Embedder, GatewayError, HashEmbedder, MockBackend, RemoteChatBackend, DEFAULT_EMBED_DIM,
};
use crate::Timestamp;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config value: {0}")]
    Invalid(String),
    #[error(transparent)]
    Backend(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub collab_read: bool,
    pub llm_curation: bool,
    pub collab_write: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self::FULL
    }
}

impl AblationConfig {
    pub const FULL: Self = Self { collab_read: true, llm_curation: true, collab_write: true };

    /// The full system and the three single-toggle ablations.
    pub fn table() -> [(&'static str, AblationConfig); 4] {
        [
            ("full", Self::FULL),
            ("w/o collab read", Self { collab_read: false, ..Self::FULL }),
            ("w/o llm curation", Self { llm_curation: false, ..Self::FULL }),
            ("w/o collab write", Self { collab_write: false, ..Self::FULL }),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankerKind {
    #[default]
    Llm,
    Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropagationMode {
    /// One Stage-W call per interaction.
    #[default]
    Batched,
    /// One call for the user and item plus one per curated neighbor.
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityKind {
    #[default]
    Constant,
    TokenOverlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    #[default]
    Mock,
    RemoteChat,
    HashEmbed,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

impl BackendConfig {
    pub fn mock(seed: u64) -> Self {
        Self { kind: BackendKind::Mock, seed, ..Self::default() }
    }

    pub fn hash_embed(dim: usize) -> Self {
        Self { kind: BackendKind::HashEmbed, dim: Some(dim), ..Self::default() }
    }

    fn validate_chat(&self, slot: &str) -> Result<(), ConfigError> {
        match self.kind {
            BackendKind::Mock => Ok(()),
            BackendKind::RemoteChat => {
                for (name, value) in
                    [("endpoint", &self.endpoint), ("api_key_env", &self.api_key_env), ("model", &self.model)]
                {
                    if value.as_deref().is_none_or(|v| v.trim().is_empty()) {
                        return Err(ConfigError::Invalid(format!("backends.{slot}: remote-chat needs {name}")));
                    }
                }
                Ok(())
            }
            BackendKind::HashEmbed => {
                Err(ConfigError::Invalid(format!("backends.{slot}: hash-embed is not a chat backend")))
            }
        }
    }

    pub fn build_chat(&self) -> Result<Arc<dyn Backend>, ConfigError> {
        match self.kind {
            BackendKind::Mock => Ok(Arc::new(MockBackend::new(self.seed))),
            BackendKind::RemoteChat => {
                let field = |v: &Option<String>| v.clone().unwrap_or_default();
                Ok(Arc::new(RemoteChatBackend::from_env(
                    &field(&self.endpoint),
                    &field(&self.api_key_env),
                    &field(&self.model),
                )?))
            }
            BackendKind::HashEmbed => Err(ConfigError::Invalid("hash-embed is not a chat backend".into())),
        }
    }

    pub fn build_embedder(&self) -> Result<Box<dyn Embedder>, ConfigError> {
        match self.kind {
            BackendKind::HashEmbed => Ok(Box::new(HashEmbedder::new(self.dim.unwrap_or(DEFAULT_EMBED_DIM))?)),
            other => Err(ConfigError::Invalid(format!("{other:?} backend cannot embed"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Backends {
    pub mem: BackendConfig,
    pub rec: BackendConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed: Option<BackendConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge: Option<BackendConfig>,
}

impl Default for Backends {
    fn default() -> Self {
        Self { mem: BackendConfig::mock(0), rec: BackendConfig::mock(0), embed: None, judge: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub k: usize,
    pub n_facets: usize,
    pub token_budget: usize,
    pub temperature: f64,
    pub domain: Domain,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ruleset_path: Option<PathBuf>,
    pub ranker: RankerKind,
    pub propagation: PropagationMode,
    pub similarity: SimilarityKind,
    pub titles_per_user: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate_shuffle_seed: Option<u64>,
    /// Reference time for recency; defaults to the latest edge timestamp.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub now: Option<Timestamp>,
    pub ks: Vec<usize>,
    pub ablation: AblationConfig,
    pub backends: Backends,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 16,
            n_facets: 7,
            token_budget: 1800,
            temperature: 0.0,
            domain: Domain::Books,
            ruleset_path: None,
            ranker: RankerKind::Llm,
            propagation: PropagationMode::Batched,
            similarity: SimilarityKind::Constant,
            titles_per_user: 3,
            candidate_shuffle_seed: None,
            now: None,
            ks: vec![1, 3, 5],
            ablation: AblationConfig::FULL,
            backends: Backends::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Loads a config file; a relative `ruleset_path` resolves against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut config = Self::from_toml_str(&text)?;
        if let (Some(rules), Some(dir)) = (&config.ruleset_path, path.parent()) {
            if rules.is_relative() {
                config.ruleset_path = Some(dir.join(rules));
            }
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.k == 0 {
            return invalid("k must be positive");
        }
        if self.n_facets == 0 {
            return invalid("n_facets must be positive");
        }
        if self.token_budget == 0 {
            return invalid("token_budget must be positive");
        }
        if self.titles_per_user == 0 {
            return invalid("titles_per_user must be positive");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return invalid("temperature must lie in [0, 2]");
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return invalid("ks must be a non-empty list of positive cutoffs");
        }
        self.backends.mem.validate_chat("mem")?;
        self.backends.rec.validate_chat("rec")?;
        if let Some(judge) = &self.backends.judge {
            judge.validate_chat("judge")?;
        }
        if let Some(embed) = &self.backends.embed {
            if embed.kind != BackendKind::HashEmbed {
                return invalid("backends.embed must be hash-embed");
            }
            if embed.dim == Some(0) {
                return invalid("backends.embed.dim must be positive");
            }
        }
        Ok(())
    }

    /// Overrides one key by dotted path (`k`, `ablation.collab_write`,
    /// `backends.mem.seed`). The value is parsed as a TOML literal, falling
    /// back to a bare string.
    pub fn set_param(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let mut root = toml::Table::try_from(&*self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let parsed = parse_literal(value);
        let mut parts: Vec<&str> = key.split('.').collect();
        let last =
            parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| ConfigError::Invalid(format!("bad key {key:?}")))?;
        let mut table = &mut root;
        for part in parts {
            table = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| ConfigError::Invalid(format!("{key:?}: {part} is not a table")))?;
        }
        table.insert(last.to_string(), parsed);
        let updated: Self = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Invalid(format!("{key} = {value}: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn similarity_provider(&self) -> Box<dyn SimilarityProvider> {
        match self.similarity {
            SimilarityKind::Constant => Box::new(ConstantSimilarity::default()),
            SimilarityKind::TokenOverlap => Box::new(TokenOverlapSimilarity),
        }
    }

    pub fn embedder(&self) -> Result<Box<dyn Embedder>, ConfigError> {
        self.backends.embed.clone().unwrap_or_else(|| BackendConfig::hash_embed(DEFAULT_EMBED_DIM)).build_embedder()
    }
}

fn parse_literal(value: &str) -> toml::Value {
    let wrapped = format!("v = {value}");
    toml::from_str::<toml::Table>(&wrapped)
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}
