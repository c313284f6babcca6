//! Uniform access to chat completion and text embedding.
//!
//! A [`Backend`] is either live HTTP ([`live::LiveBackend`]) or scripted from
//! a fixture file ([`scripted::ScriptedBackend`]). Sessions obtain a
//! [`SessionGateway`], which owns the per-session consumption state, retries
//! transient transport failures, and charges every physical request to a
//! [`CostLedger`].

pub mod live;
pub mod scripted;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ledger tag used for embedding batches.
pub const EMBED_TAG: &str = "embed";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend unavailable after {attempts} attempts: {message}")]
    BackendUnavailable { attempts: usize, message: String },
    #[error("scripted backend has no entry left for tag {tag:?}")]
    FixtureMiss { tag: String },
    #[error("fixture parse error: {0}")]
    FixtureParse(String),
    #[error("embed called with an empty text list")]
    EmptyInput,
    #[error("transient transport failure: {0}")]
    Transient(String),
    #[error("backend rejected request: {0}")]
    Rejected(String),
    #[error("missing API credential: set {0}")]
    MissingCredential(String),
}

/// Which framework step issued a chat request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepTag {
    Reflect,
    Plan,
    Select,
    Analyze,
    Code,
    Repair,
}

impl StepTag {
    pub fn as_str(self) -> &'static str {
        match self {
            StepTag::Reflect => "reflect",
            StepTag::Plan => "plan",
            StepTag::Select => "select",
            StepTag::Analyze => "analyze",
            StepTag::Code => "code",
            StepTag::Repair => "repair",
        }
    }
}

impl std::fmt::Display for StepTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// A chat completion request. `messages` is non-empty and starts with a
/// system or user message; the renderers in [`crate::prompts`] uphold this.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub tag: StepTag,
}

impl ChatRequest {
    /// All message contents joined, in order. This is the text fixture
    /// matchers run against and the basis of the default token estimate.
    pub fn rendered_text(&self) -> String {
        let mut out = String::new();
        for (i, message) in self.messages.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&message.content);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ChatResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// A fixed-length embedding. All vectors produced by one backend share a
/// dimension and hold finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, GatewayError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(GatewayError::FixtureParse(
                "embedding must be non-empty and finite".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

/// Vectors plus the token usage the backend reported for the batch.
pub struct EmbedResponse {
    pub vectors: Vec<EmbeddingVector>,
    pub input_tokens: u64,
}

/// Counts whitespace-delimited tokens; the usage estimate when a backend
/// reports none.
pub fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagCounters {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// Monotone counters of API calls and tokens, broken down by step tag.
/// Totals are derived from the per-tag map, so conservation holds by
/// construction. Clones share state.
#[derive(Debug, Clone, Default)]
pub struct CostLedger {
    per_tag: Arc<Mutex<BTreeMap<String, TagCounters>>>,
}

/// A point-in-time copy of a ledger.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub api_calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub per_tag: BTreeMap<String, TagCounters>,
}

/// Counter growth between two snapshots of the same ledger.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerDelta {
    pub api_calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, tag: &str, input_tokens: u64, output_tokens: u64) {
        let mut map = self.per_tag.lock().expect("ledger lock");
        let entry = map.entry(tag.to_string()).or_default();
        entry.calls += 1;
        entry.input_tokens += input_tokens;
        entry.output_tokens += output_tokens;
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        let map = self.per_tag.lock().expect("ledger lock");
        let mut snap = LedgerSnapshot {
            per_tag: map.clone(),
            ..Default::default()
        };
        for counters in map.values() {
            snap.api_calls += counters.calls;
            snap.input_tokens += counters.input_tokens;
            snap.output_tokens += counters.output_tokens;
        }
        snap
    }
}

impl LedgerSnapshot {
    /// Growth since `earlier`.
    pub fn delta_since(&self, earlier: &LedgerSnapshot) -> LedgerDelta {
        LedgerDelta {
            api_calls: self.api_calls - earlier.api_calls,
            input_tokens: self.input_tokens - earlier.input_tokens,
            output_tokens: self.output_tokens - earlier.output_tokens,
        }
    }
}

/// Retry policy for transient transport failures.
#[derive(Debug, Clone, Copy)]
pub struct RetryConfig {
    /// Maximum physical requests per logical call.
    pub max_attempts: usize,
    /// Delay before the first retry; doubles each retry (1s, 2s, 4s, ...).
    pub base_delay: Duration,
}

impl Default for RetryConfig {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryConfig {
    /// No waiting between attempts; used by tests.
    pub fn immediate(max_attempts: usize) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
        }
    }
}

/// A chat + embedding provider. Implementations are shared across sessions;
/// per-session consumption state lives in the [`BackendSession`].
pub trait Backend: Send + Sync {
    fn start_session(&self) -> Box<dyn BackendSession>;
}

/// One session's view of a backend. `complete`/`embed` perform a single
/// physical request; retry and accounting happen in [`SessionGateway`].
pub trait BackendSession: Send {
    fn complete(&mut self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
    fn embed(&mut self, texts: &[String]) -> Result<EmbedResponse, GatewayError>;
}

/// Factory handed to the run loop; spawns one [`SessionGateway`] per session.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    retry: RetryConfig,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            retry: RetryConfig::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryConfig) -> Self {
        self.retry = retry;
        self
    }

    /// Starts a session with a fresh ledger and fresh fixture consumption.
    pub fn session(&self) -> SessionGateway {
        SessionGateway {
            session: self.backend.start_session(),
            ledger: CostLedger::new(),
            retry: self.retry,
        }
    }
}

/// Session-scoped gateway: retries, backoff, and cost accounting.
pub struct SessionGateway {
    session: Box<dyn BackendSession>,
    ledger: CostLedger,
    retry: RetryConfig,
}

impl SessionGateway {
    /// Wraps an existing backend session; mainly for tests.
    pub fn from_session(session: Box<dyn BackendSession>, retry: RetryConfig) -> Self {
        Self {
            session,
            ledger: CostLedger::new(),
            retry,
        }
    }

    /// Shared handle to this session's ledger.
    pub fn ledger(&self) -> CostLedger {
        self.ledger.clone()
    }

    /// Issues a chat completion, retrying transient failures with
    /// exponential backoff. Every physical attempt counts as an API call.
    pub fn complete(&mut self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        debug_assert!(!request.messages.is_empty());
        let tag = request.tag.as_str();
        let mut last_error = String::new();
        for attempt in 1..=self.retry.max_attempts {
            match self.session.complete(request) {
                Ok(response) => {
                    self.ledger
                        .record(tag, response.input_tokens, response.output_tokens);
                    return Ok(response);
                }
                Err(GatewayError::Transient(message)) => {
                    self.ledger.record(tag, 0, 0);
                    last_error = message;
                    if attempt < self.retry.max_attempts {
                        std::thread::sleep(self.retry.base_delay * (1 << (attempt - 1)));
                    }
                }
                Err(GatewayError::Rejected(message)) => {
                    self.ledger.record(tag, 0, 0);
                    return Err(GatewayError::Rejected(message));
                }
                Err(other) => return Err(other),
            }
        }
        Err(GatewayError::BackendUnavailable {
            attempts: self.retry.max_attempts,
            message: last_error,
        })
    }

    /// Embeds a batch of texts; one API call per batch.
    pub fn embed(&mut self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let mut last_error = String::new();
        for attempt in 1..=self.retry.max_attempts {
            match self.session.embed(texts) {
                Ok(response) => {
                    self.ledger.record(EMBED_TAG, response.input_tokens, 0);
                    return Ok(response.vectors);
                }
                Err(GatewayError::Transient(message)) => {
                    self.ledger.record(EMBED_TAG, 0, 0);
                    last_error = message;
                    if attempt < self.retry.max_attempts {
                        std::thread::sleep(self.retry.base_delay * (1 << (attempt - 1)));
                    }
                }
                Err(other) => return Err(other),
            }
        }
        Err(GatewayError::BackendUnavailable {
            attempts: self.retry.max_attempts,
            message: last_error,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct FlakySession {
        failures_left: usize,
    }

    impl BackendSession for FlakySession {
        fn complete(&mut self, _request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
            if self.failures_left > 0 {
                self.failures_left -= 1;
                return Err(GatewayError::Transient("connection reset".into()));
            }
            Ok(ChatResponse {
                text: "ok".into(),
                input_tokens: 2,
                output_tokens: 1,
            })
        }

        fn embed(&mut self, texts: &[String]) -> Result<EmbedResponse, GatewayError> {
            Ok(EmbedResponse {
                vectors: texts
                    .iter()
                    .map(|_| EmbeddingVector::new(vec![0.0; 4]).unwrap())
                    .collect(),
                input_tokens: 1,
            })
        }
    }

    fn request(tag: StepTag) -> ChatRequest {
        ChatRequest {
            messages: vec![Message {
                role: Role::User,
                content: "hello there".into(),
            }],
            temperature: 0.0,
            max_tokens: 64,
            tag,
        }
    }

    #[test]
    fn retry_recovers_and_counts_each_attempt() {
        let mut gw = SessionGateway::from_session(
            Box::new(FlakySession { failures_left: 2 }),
            RetryConfig::immediate(3),
        );
        let response = gw.complete(&request(StepTag::Code)).unwrap();
        assert_eq!(response.text, "ok");
        let snap = gw.ledger().snapshot();
        assert_eq!(snap.api_calls, 3);
        assert_eq!(snap.per_tag["code"].calls, 3);
    }

    #[test]
    fn retry_bound_is_respected() {
        let mut gw = SessionGateway::from_session(
            Box::new(FlakySession { failures_left: 99 }),
            RetryConfig::immediate(3),
        );
        let err = gw.complete(&request(StepTag::Plan)).unwrap_err();
        match err {
            GatewayError::BackendUnavailable { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("expected BackendUnavailable, got {other:?}"),
        }
        assert_eq!(gw.ledger().snapshot().api_calls, 3);
    }

    #[test]
    fn ledger_totals_equal_per_tag_sum() {
        let ledger = CostLedger::new();
        ledger.record("reflect", 10, 5);
        ledger.record("plan", 20, 15);
        ledger.record("plan", 1, 1);
        let snap = ledger.snapshot();
        let calls: u64 = snap.per_tag.values().map(|c| c.calls).sum();
        let input: u64 = snap.per_tag.values().map(|c| c.input_tokens).sum();
        let output: u64 = snap.per_tag.values().map(|c| c.output_tokens).sum();
        assert_eq!(snap.api_calls, calls);
        assert_eq!(snap.input_tokens, input);
        assert_eq!(snap.output_tokens, output);
        assert_eq!(snap.api_calls, 3);
    }

    #[test]
    fn embed_rejects_empty_input() {
        let mut gw = SessionGateway::from_session(
            Box::new(FlakySession { failures_left: 0 }),
            RetryConfig::immediate(1),
        );
        assert!(matches!(gw.embed(&[]), Err(GatewayError::EmptyInput)));
    }

    #[test]
    fn snapshot_delta() {
        let ledger = CostLedger::new();
        ledger.record("code", 5, 5);
        let before = ledger.snapshot();
        ledger.record("repair", 3, 2);
        let delta = ledger.snapshot().delta_since(&before);
        assert_eq!(delta.api_calls, 1);
        assert_eq!(delta.input_tokens, 3);
        assert_eq!(delta.output_tokens, 2);
    }
}
