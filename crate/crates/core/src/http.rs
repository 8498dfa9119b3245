//! Blocking JSON-over-HTTP POST with bounded retries.
//!
//! Only transport failures are retried. Any HTTP response, including error
//! statuses and well-formed replies the caller dislikes, is returned as-is.

use std::thread;
use std::time::Duration;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff_base: Duration::from_millis(250),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HttpError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("cannot decode response: {0}")]
    Decode(String),
}

/// POSTs `body` and returns the raw response text of a 2xx reply.
pub fn post_json<T: Serialize>(
    url: &str,
    bearer: Option<&str>,
    body: &T,
    policy: RetryPolicy,
) -> Result<String, HttpError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(policy.timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let mut attempt = 0;
    loop {
        attempt += 1;
        let mut req = agent.post(url);
        if let Some(token) = bearer {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let text = resp
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| HttpError::Decode(e.to_string()))?;
                if !(200..300).contains(&status) {
                    return Err(HttpError::Status { status, body: text });
                }
                return Ok(text);
            }
            Err(e) if attempt > policy.max_retries => {
                return Err(HttpError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                })
            }
            Err(_) => {
                let factor = 1u32 << (attempt - 1).min(16);
                thread::sleep(policy.backoff_base.saturating_mul(factor));
            }
        }
    }
}
