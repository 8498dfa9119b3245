//! Chat-completion gateway: one interface over remote endpoints and a
//! deterministic rule-driven mock, plus model-output parsing.

mod mock;
mod parse;
mod remote;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::schema::{FrameLabel, LabelTaxonomy};

pub use mock::{load_mock_rules, MockFallback, MockModel, MockRule, MockRuleSet, Matcher, cot_response};
pub use parse::{parse_frame_response, ParseFailure};
pub use remote::RemoteModel;

/// Appended to the conversation when a reply could not be parsed.
pub const REASK_INSTRUCTION: &str =
    "Return only the structured label as (\"actor\", \"reason\", \"cause\") with no other text.";

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("endpoint configuration error: {0}")]
    Config(String),
    #[error("mock rule {index}: {message}")]
    RuleFormat { index: usize, message: String },
    #[error("invalid request: {0}")]
    Request(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Endpoint { status: u16, body: String },
    #[error("cannot decode endpoint response: {0}")]
    Decode(String),
    #[error("model call budget of {limit} exhausted")]
    BudgetExhausted { limit: usize },
}

impl From<crate::http::HttpError> for GatewayError {
    fn from(e: crate::http::HttpError) -> Self {
        use crate::http::HttpError;
        match e {
            HttpError::Transport { attempts, message } => GatewayError::Transport { attempts, message },
            HttpError::Status { status, body } => GatewayError::Endpoint { status, body },
            HttpError::Decode(m) => GatewayError::Decode(m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

/// Sampling parameters sent with every request. Defaults follow the
/// open-weight model column of the reference configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodingConfig {
    pub top_p: f64,
    pub top_k: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    pub repetition_penalty: f64,
    pub presence_penalty: f64,
    pub seed: u64,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        DecodingConfig {
            top_p: 0.95,
            top_k: 70,
            temperature: 0.3,
            max_tokens: 1024,
            repetition_penalty: 0.0,
            presence_penalty: 0.0,
            seed: 42,
        }
    }
}

impl DecodingConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::Request(m.to_string()));
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must be in (0, 1]");
        }
        if self.top_k == 0 {
            return bad("top_k must be positive");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be non-negative");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        if !self.repetition_penalty.is_finite() || !self.presence_penalty.is_finite() {
            return bad("penalties must be finite");
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        DecodingConfig { seed, ..self.clone() }
    }
}

/// Where completions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EndpointSpec {
    Remote {
        url: String,
        model: String,
        /// Environment variable holding the bearer token.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        token_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default = "default_retries")]
        max_retries: u32,
        /// Forwarded as-is; not interpreted here.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reasoning: Option<bool>,
    },
    Mock {
        rules: PathBuf,
        /// Dataset file used to resolve gold-label placeholders.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        answer_key: Option<PathBuf>,
    },
}

fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    3
}

impl EndpointSpec {
    /// Relative paths inside the spec are resolved against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let EndpointSpec::Mock { rules, answer_key } = self {
            if rules.is_relative() {
                *rules = base.join(&*rules);
            }
            if let Some(k) = answer_key {
                if k.is_relative() {
                    *k = base.join(&*k);
                }
            }
        }
    }

    pub fn connect(&self, name: &str, taxonomy: &LabelTaxonomy) -> Result<Arc<dyn ChatModel>, GatewayError> {
        match self {
            EndpointSpec::Remote { .. } => Ok(Arc::new(RemoteModel::new(name, self.clone())?)),
            EndpointSpec::Mock { rules, answer_key } => {
                let rules = load_mock_rules(rules)?;
                let mut model = MockModel::new(name, rules, taxonomy);
                if let Some(path) = answer_key {
                    let ingested = crate::corpus::ingest(path, taxonomy)
                        .map_err(|e| GatewayError::Config(format!("answer key: {e}")))?;
                    model = model.with_answer_key(ingested.messages.iter().map(|m| (m.text.clone(), m.label.clone())));
                }
                Ok(Arc::new(model))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl std::ops::Add for Usage {
    type Output = Usage;
    fn add(self, o: Usage) -> Usage {
        Usage {
            prompt_tokens: self.prompt_tokens + o.prompt_tokens,
            completion_tokens: self.completion_tokens + o.completion_tokens,
        }
    }
}

impl std::iter::Sum for Usage {
    fn sum<I: Iterator<Item = Usage>>(iter: I) -> Usage {
        iter.fold(Usage::default(), |a, b| a + b)
    }
}

/// Raw request/response pair kept for auditing remote calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: String,
    pub response: String,
    /// Parameters the endpoint reported as honored, when it says so.
    pub acknowledged: Option<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
    pub latency: Duration,
    pub exchange: Option<Exchange>,
}

pub trait ChatModel: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, messages: &[ChatMessage], decoding: &DecodingConfig) -> Result<Completion, GatewayError>;
}

/// Checks the request preconditions shared by every model.
pub fn check_request(messages: &[ChatMessage], decoding: &DecodingConfig) -> Result<(), GatewayError> {
    match messages.last() {
        None => return Err(GatewayError::Request("no messages".into())),
        Some(m) if m.role != Role::User => {
            return Err(GatewayError::Request("last message must have the user role".into()))
        }
        _ => {}
    }
    if let Some(m) = messages.iter().find(|m| m.content.is_empty() && m.role != Role::Assistant) {
        return Err(GatewayError::Request(format!("empty {:?} message", m.role)));
    }
    decoding.validate()
}

pub fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Counts model calls across threads against a fixed limit.
#[derive(Debug)]
pub struct CallBudget {
    limit: usize,
    used: AtomicUsize,
}

impl CallBudget {
    pub fn new(limit: usize) -> Self {
        CallBudget { limit, used: AtomicUsize::new(0) }
    }

    pub fn unlimited() -> Self {
        Self::new(usize::MAX)
    }

    /// Reserves `n` calls, all or nothing.
    pub fn try_reserve(&self, n: usize) -> bool {
        self.used
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |u| {
                u.checked_add(n).filter(|&t| t <= self.limit)
            })
            .is_ok()
    }

    /// Returns `n` previously reserved calls.
    pub fn release(&self, n: usize) {
        self.used.fetch_sub(n.min(self.used()), Ordering::SeqCst);
    }

    pub fn used(&self) -> usize {
        self.used.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> usize {
        self.limit.saturating_sub(self.used())
    }

    pub fn limit(&self) -> usize {
        self.limit
    }
}

/// Runs `f` over `items` on a pool of at most `parallelism` threads,
/// returning results in input order.
pub fn run_parallel<T, R, F>(parallelism: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    if parallelism <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
        Ok(pool) => pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()),
        Err(_) => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
    }
}

/// Outcome of a batch; `total` equals the sum of per-call usage.
pub struct BatchCompletion {
    pub results: Vec<Result<Completion, GatewayError>>,
    pub total: Usage,
}

pub fn complete_batch(
    model: &dyn ChatModel,
    requests: &[(Vec<ChatMessage>, DecodingConfig)],
    parallelism: usize,
) -> BatchCompletion {
    let results = run_parallel(parallelism, requests, |_, (msgs, dec)| model.complete(msgs, dec));
    let total = results.iter().filter_map(|r| r.as_ref().ok()).map(|c| c.usage).sum();
    BatchCompletion { results, total }
}

/// Why a call produced no label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputError {
    Unparseable,
    InvalidLabel,
}

impl OutputError {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputError::Unparseable => "unparseable",
            OutputError::InvalidLabel => "invalid_label",
        }
    }
}

/// Result of asking a model for one label, re-ask included.
#[derive(Debug, Clone)]
pub struct LabelAttempt {
    pub label: Result<FrameLabel, OutputError>,
    /// Triple extracted from an invalid-label reply.
    pub invalid: Option<FrameLabel>,
    pub raw: String,
    pub calls: usize,
    pub usage: Usage,
}

/// Asks for a label; an unparseable reply earns exactly one re-ask.
///
/// Endpoint and transport failures count as unparseable output. Each call
/// must be covered by `budget`; if the first call cannot be reserved the
/// budget error is returned.
pub fn request_label(
    model: &dyn ChatModel,
    messages: &[ChatMessage],
    decoding: &DecodingConfig,
    taxonomy: &LabelTaxonomy,
    budget: &CallBudget,
) -> Result<LabelAttempt, GatewayError> {
    if !budget.try_reserve(1) {
        return Err(GatewayError::BudgetExhausted { limit: budget.limit() });
    }
    let mut usage = Usage::default();
    let first = match model.complete(messages, decoding) {
        Ok(c) => c,
        Err(e @ GatewayError::Request(_)) | Err(e @ GatewayError::Config(_)) => return Err(e),
        Err(e) => {
            return Ok(LabelAttempt {
                label: Err(OutputError::Unparseable),
                invalid: None,
                raw: format!("<endpoint error: {e}>"),
                calls: 1,
                usage,
            })
        }
    };
    usage = usage + first.usage;
    match parse_frame_response(&first.text, taxonomy) {
        Ok(label) => Ok(LabelAttempt { label: Ok(label), invalid: None, raw: first.text, calls: 1, usage }),
        Err(ParseFailure::InvalidLabel(l)) => Ok(LabelAttempt {
            label: Err(OutputError::InvalidLabel),
            invalid: Some(l),
            raw: first.text,
            calls: 1,
            usage,
        }),
        Err(ParseFailure::Unparseable) => {
            if !budget.try_reserve(1) {
                return Ok(LabelAttempt {
                    label: Err(OutputError::Unparseable),
                    invalid: None,
                    raw: first.text,
                    calls: 1,
                    usage,
                });
            }
            let mut retry = messages.to_vec();
            retry.push(ChatMessage::assistant(first.text.clone()));
            retry.push(ChatMessage::user(REASK_INSTRUCTION));
            let second = model.complete(&retry, decoding);
            let (label, invalid, raw) = match second {
                Ok(c) => {
                    usage = usage + c.usage;
                    match parse_frame_response(&c.text, taxonomy) {
                        Ok(l) => (Ok(l), None, c.text),
                        Err(ParseFailure::InvalidLabel(l)) => (Err(OutputError::InvalidLabel), Some(l), c.text),
                        Err(ParseFailure::Unparseable) => (Err(OutputError::Unparseable), None, c.text),
                    }
                }
                Err(e) => (Err(OutputError::Unparseable), None, format!("<endpoint error: {e}>")),
            };
            Ok(LabelAttempt { label, invalid, raw, calls: 2, usage })
        }
    }
}

/// Named endpoint specs from configuration.
pub type EndpointTable = BTreeMap<String, EndpointSpec>;
