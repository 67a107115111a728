//! Language-model access.
//!
//! A [`Gateway`] wraps one [`Backend`] and records every call in a shared
//! [`CallLedger`], keyed by role and pipeline stage. Backends are
//! synchronous; the propagation worker runs them on its own thread.

mod embed;
mod ledger;
pub mod mock;
mod remote;
pub mod structured;

pub use embed::{cosine, Embedder, HashEmbedder, DEFAULT_EMBED_DIM};
pub(crate) use ledger::render_rows as render_ledger_rows;
pub use ledger::{CallLedger, LedgerEntry, LedgerRow};
pub use mock::{FailingBackend, FnBackend, MockBackend, ScriptedBackend};
pub use remote::{RemoteChatBackend, RetryPolicy};
pub use structured::{Field, Shape};

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned HTTP {status}: {body}")]
    Backend { status: u16, body: String },
    #[error("structured output invalid: {message}")]
    StructuredOutput { message: String, raw: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("cannot embed text without tokens")]
    ZeroVector,
}

impl GatewayError {
    /// Raw model text attached to a structured-output failure.
    pub fn raw_text(&self) -> Option<&str> {
        match self {
            GatewayError::StructuredOutput { raw, .. } => Some(raw),
            _ => None,
        }
    }
}

/// Which model a request is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    /// Memory manager.
    Mem,
    /// Reasoning / ranking model.
    Rec,
    Judge,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Mem => "LM_Mem",
            Role::Rec => "LLM_Rec",
            Role::Judge => "Judge",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    RuleGen,
    StageR,
    ReRank,
    StageW,
    Judge,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::RuleGen => "Rule-Gen",
            Stage::StageR => "Stage-R",
            Stage::ReRank => "Stage-ReRank",
            Stage::StageW => "Stage-W",
            Stage::Judge => "Judge",
        })
    }
}

/// Whether a call is the first attempt at a logical request or a follow-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CallKind {
    #[default]
    Primary,
    /// Structured-output repair round-trip.
    Repair,
    /// Re-issued request (e.g. after a stale write).
    Retry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role: Role,
    pub stage: Stage,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(default)]
    pub kind: CallKind,
}

pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 2048;

impl ChatRequest {
    pub fn new(role: Role, stage: Stage, user: impl Into<String>) -> Self {
        Self {
            role,
            stage,
            system: String::new(),
            user: user.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            kind: CallKind::Primary,
        }
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system = system.into();
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_kind(mut self, kind: CallKind) -> Self {
        self.kind = kind;
        self
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendReply {
    pub text: String,
    /// Backend-reported usage; estimated from text when absent.
    pub usage: Option<Usage>,
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn chat(&self, request: &ChatRequest) -> Result<BackendReply, GatewayError>;
}

/// Approximate token count: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredReply {
    pub value: Value,
    pub raw: String,
    pub repaired: bool,
}

#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    ledger: Arc<CallLedger>,
    temperature: Option<f64>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").field("backend", &self.backend.name()).finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, ledger: Arc<CallLedger>) -> Self {
        Self { backend, ledger, temperature: None }
    }

    /// Sends every request at `temperature` regardless of what it asks for.
    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = Some(temperature);
        self
    }

    /// Gateway over a fresh ledger.
    pub fn standalone(backend: impl Backend + 'static) -> Self {
        Self::new(Arc::new(backend), Arc::new(CallLedger::new()))
    }

    pub fn ledger(&self) -> &Arc<CallLedger> {
        &self.ledger
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// Raw model text for one request.
    pub fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let overridden;
        let request = match self.temperature {
            Some(temperature) if temperature != request.temperature => {
                overridden = ChatRequest { temperature, ..request.clone() };
                &overridden
            }
            _ => request,
        };
        request.validate()?;
        let started = Instant::now();
        match self.backend.chat(request) {
            Ok(reply) => {
                let usage = reply.usage.unwrap_or_else(|| Usage {
                    input_tokens: (estimate_tokens(&request.system) + estimate_tokens(&request.user)) as u64,
                    output_tokens: estimate_tokens(&reply.text) as u64,
                });
                self.ledger.record_success(request, usage, started.elapsed());
                Ok(reply.text)
            }
            Err(err) => {
                self.ledger.record_failure(request, started.elapsed());
                Err(err)
            }
        }
    }

    /// Completes and extracts a JSON object matching `shape`. A reply that
    /// does not parse or validate gets one repair round-trip carrying the
    /// error; a second failure is returned with the raw text attached.
    pub fn complete_structured(&self, request: &ChatRequest, shape: &Shape) -> Result<StructuredReply, GatewayError> {
        let raw = self.complete(request)?;
        let first_error = match structured::parse_and_validate(&raw, shape) {
            Ok(value) => return Ok(StructuredReply { value, raw, repaired: false }),
            Err(e) => e,
        };
        log::debug!("{} reply failed validation ({first_error}); requesting repair", request.stage);
        let repair = ChatRequest {
            user: structured::repair_prompt(&request.user, &raw, &first_error),
            kind: CallKind::Repair,
            ..request.clone()
        };
        let raw = self.complete(&repair)?;
        match structured::parse_and_validate(&raw, shape) {
            Ok(value) => Ok(StructuredReply { value, raw, repaired: true }),
            Err(message) => Err(GatewayError::StructuredOutput { message, raw }),
        }
    }
}
