use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{check_request, ChatMessage, ChatModel, Completion, DecodingConfig, EndpointSpec, Exchange, GatewayError, Usage};
use crate::http::{self, RetryPolicy};

/// Neutral chat-completion wire request.
#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    top_p: f64,
    top_k: u32,
    max_tokens: u32,
    repetition_penalty: f64,
    presence_penalty: f64,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    reasoning: Option<bool>,
}

#[derive(Debug, Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// HTTP endpoint speaking the neutral wire contract.
///
/// Accepts either `{"content": ..., "usage": {...}}` or an OpenAI-style
/// `{"choices": [{"message": {"content": ...}}], "usage": {...}}` reply. An
/// optional `acknowledged` array lists the parameters the server honored.
pub struct RemoteModel {
    name: String,
    url: String,
    model: String,
    token: Option<String>,
    policy: RetryPolicy,
    reasoning: Option<bool>,
}

impl RemoteModel {
    pub fn new(name: &str, spec: EndpointSpec) -> Result<Self, GatewayError> {
        let EndpointSpec::Remote {
            url,
            model,
            token_env,
            timeout_secs,
            max_retries,
            reasoning,
        } = spec
        else {
            return Err(GatewayError::Config("not a remote endpoint".into()));
        };
        let token = match token_env {
            Some(var) => Some(
                std::env::var(&var)
                    .map_err(|_| GatewayError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        Ok(RemoteModel {
            name: name.to_string(),
            url,
            model,
            token,
            policy: RetryPolicy {
                timeout: Duration::from_secs(timeout_secs),
                max_retries,
                ..RetryPolicy::default()
            },
            reasoning,
        })
    }

    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.policy.backoff_base = base;
        self
    }
}

fn extract_text(v: &Value) -> Option<String> {
    if let Some(s) = v.get("content").and_then(Value::as_str) {
        return Some(s.to_string());
    }
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
}

impl ChatModel for RemoteModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, messages: &[ChatMessage], decoding: &DecodingConfig) -> Result<Completion, GatewayError> {
        check_request(messages, decoding)?;
        let req = WireRequest {
            model: &self.model,
            messages,
            temperature: decoding.temperature,
            top_p: decoding.top_p,
            top_k: decoding.top_k,
            max_tokens: decoding.max_tokens,
            repetition_penalty: decoding.repetition_penalty,
            presence_penalty: decoding.presence_penalty,
            seed: decoding.seed,
            reasoning: self.reasoning,
        };
        let started = Instant::now();
        let raw = http::post_json(&self.url, self.token.as_deref(), &req, self.policy)?;
        let latency = started.elapsed();
        let body: Value = serde_json::from_str(&raw).map_err(|e| GatewayError::Decode(e.to_string()))?;
        let text = extract_text(&body).ok_or_else(|| GatewayError::Decode("response has no assistant text".into()))?;
        let usage: WireUsage = body
            .get("usage")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| GatewayError::Decode(e.to_string()))?
            .unwrap_or_default();
        let acknowledged = body.get("acknowledged").and_then(Value::as_array).map(|a| {
            a.iter().filter_map(Value::as_str).map(str::to_string).collect()
        });
        Ok(Completion {
            text,
            usage: Usage {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            },
            latency,
            exchange: Some(Exchange {
                request: serde_json::to_string(&req).expect("request serializes"),
                response: raw,
                acknowledged,
            }),
        })
    }
}
