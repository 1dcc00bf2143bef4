//! Blocking chat-completion client.
//!
//! One `POST {base_url}/chat/completions` per attempt. Connection errors,
//! timeouts, HTTP 429 and 5xx are retried with exponential backoff, up to
//! `max_retries` extra attempts. The bearer token is read from the
//! environment at call time and never stored.

use std::fmt;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{AgentBackend, AgentError, AgentRequest, AgentResponse, Usage};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "CRITIFUSION_API_KEY";

const MAX_BACKOFF: Duration = Duration::from_secs(8);

#[derive(Clone, PartialEq)]
pub struct AgentEndpoint {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable with the token, not the token.
    pub token_env: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_concurrency: usize,
}

impl fmt::Debug for AgentEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AgentEndpoint")
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .field("token_env", &self.token_env)
            .field("timeout", &self.timeout)
            .field("max_retries", &self.max_retries)
            .field("initial_backoff", &self.initial_backoff)
            .field("max_concurrency", &self.max_concurrency)
            .finish()
    }
}

impl AgentEndpoint {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            token_env: API_KEY_ENV.to_owned(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            initial_backoff: Duration::from_millis(250),
            max_concurrency: 4,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.timeout.is_zero() {
            return Err(AgentError::Config("timeout must be positive".into()));
        }
        if self.max_concurrency == 0 {
            return Err(AgentError::Config("concurrency cap must be at least 1".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(AgentError::Config(format!(
                "base URL {:?} is not http(s)",
                self.base_url
            )));
        }
        Ok(())
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    fn backoff(&self, retry: u32) -> Duration {
        self.initial_backoff
            .saturating_mul(1u32.checked_shl(retry).unwrap_or(u32::MAX))
            .min(MAX_BACKOFF)
    }
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
    #[serde(default)]
    total_tokens: u64,
}

enum Attempt {
    Done(AgentResponse),
    Retry(AgentError),
    Fail(AgentError),
}

fn build_client(endpoint: &AgentEndpoint) -> Result<reqwest::blocking::Client, AgentError> {
    reqwest::blocking::Client::builder()
        .timeout(endpoint.timeout)
        .build()
        .map_err(|e| AgentError::Config(e.to_string()))
}

/// One request with retries, without a concurrency cap.
pub fn http_complete(
    endpoint: &AgentEndpoint,
    request: &AgentRequest,
) -> Result<AgentResponse, AgentError> {
    endpoint.validate()?;
    complete(&build_client(endpoint)?, endpoint, 0, request)
}

fn complete(
    client: &reqwest::blocking::Client,
    endpoint: &AgentEndpoint,
    agent: u32,
    request: &AgentRequest,
) -> Result<AgentResponse, AgentError> {
    if request.messages.is_empty() {
        return Err(AgentError::EmptyRequest);
    }
    let body = json!({
        "model": endpoint.model,
        "messages": request.messages,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    });
    let started = Instant::now();
    let mut attempts = 0;
    loop {
        attempts += 1;
        match attempt(client, endpoint, agent, &body, attempts) {
            Attempt::Done(mut r) => {
                r.latency = started.elapsed();
                r.attempts = attempts;
                return Ok(r);
            }
            Attempt::Fail(e) => return Err(e),
            Attempt::Retry(e) => {
                if attempts > endpoint.max_retries {
                    return Err(e);
                }
                std::thread::sleep(endpoint.backoff(attempts - 1));
            }
        }
    }
}

fn attempt(
    client: &reqwest::blocking::Client,
    endpoint: &AgentEndpoint,
    agent: u32,
    body: &serde_json::Value,
    attempts: u32,
) -> Attempt {
    let mut req = client.post(endpoint.url()).json(body);
    if let Ok(token) = std::env::var(&endpoint.token_env) {
        if !token.is_empty() {
            req = req.bearer_auth(token);
        }
    }
    let resp = match req.send() {
        Ok(r) => r,
        Err(e) if e.is_timeout() => return Attempt::Retry(AgentError::Timeout { agent, attempts }),
        Err(e) => {
            return Attempt::Retry(AgentError::Transport {
                agent,
                attempts,
                message: e.without_url().to_string(),
            })
        }
    };
    let status = resp.status();
    let text = match resp.text() {
        Ok(t) => t,
        Err(e) if e.is_timeout() => return Attempt::Retry(AgentError::Timeout { agent, attempts }),
        Err(e) => {
            return Attempt::Retry(AgentError::Transport {
                agent,
                attempts,
                message: e.without_url().to_string(),
            })
        }
    };
    if !status.is_success() {
        let err = AgentError::Status {
            agent,
            status: status.as_u16(),
            body: text.chars().take(200).collect(),
        };
        return if status.is_server_error() || status.as_u16() == 429 {
            Attempt::Retry(err)
        } else {
            Attempt::Fail(err)
        };
    }
    match parse_completion(agent, &text) {
        Ok(r) => Attempt::Done(r),
        Err(e) => Attempt::Fail(e),
    }
}

fn parse_completion(agent: u32, text: &str) -> Result<AgentResponse, AgentError> {
    let c: Completion = serde_json::from_str(text).map_err(|e| AgentError::Protocol {
        agent,
        message: e.to_string(),
    })?;
    let content = c
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| AgentError::Protocol {
            agent,
            message: "no choices".into(),
        })?
        .message
        .content
        .unwrap_or_default();
    let usage = c.usage.map_or(Usage::default(), |u| Usage {
        prompt_tokens: u.prompt_tokens,
        completion_tokens: u.completion_tokens,
        total_tokens: u.total_tokens,
    });
    Ok(AgentResponse {
        text: content,
        latency: Duration::ZERO,
        usage,
        attempts: 1,
        degraded: false,
    })
}

/// Counting semaphore bounding in-flight requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Shareable backend over one endpoint with a per-endpoint concurrency cap.
#[derive(Clone)]
pub struct HttpBackend {
    endpoint: AgentEndpoint,
    client: reqwest::blocking::Client,
    gate: Arc<Gate>,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend").field("endpoint", &self.endpoint).finish()
    }
}

impl HttpBackend {
    pub fn new(endpoint: AgentEndpoint) -> Result<Self, AgentError> {
        endpoint.validate()?;
        Ok(Self {
            client: build_client(&endpoint)?,
            gate: Arc::new(Gate {
                free: Mutex::new(endpoint.max_concurrency),
                cv: Condvar::new(),
            }),
            endpoint,
        })
    }

    pub fn endpoint(&self) -> &AgentEndpoint {
        &self.endpoint
    }
}

impl AgentBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn respond(&self, agent: u32, request: &AgentRequest) -> Result<AgentResponse, AgentError> {
        let _slot = self.gate.acquire();
        complete(&self.client, &self.endpoint, agent, request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_completion_bodies() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"fox, orange"}}],
                       "usage":{"prompt_tokens":5,"completion_tokens":2,"total_tokens":7}}"#;
        let r = parse_completion(1, body).unwrap();
        assert_eq!(r.text, "fox, orange");
        assert_eq!(r.usage.total_tokens, 7);
        assert!(matches!(parse_completion(1, "{}"), Err(AgentError::Protocol { .. })));
        assert!(matches!(
            parse_completion(1, r#"{"choices":[]}"#),
            Err(AgentError::Protocol { .. })
        ));
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let e = AgentEndpoint::new("http://localhost", "m");
        assert_eq!(e.backoff(0), Duration::from_millis(250));
        assert_eq!(e.backoff(2), Duration::from_millis(1000));
        assert_eq!(e.backoff(40), MAX_BACKOFF);
    }

    #[test]
    fn debug_output_names_the_variable_only() {
        let e = AgentEndpoint::new("https://api.example.com/v1", "m");
        let s = format!("{e:?}");
        assert!(s.contains(API_KEY_ENV));
    }

    #[test]
    fn endpoint_validation() {
        let mut e = AgentEndpoint::new("ftp://x", "m");
        assert!(e.validate().is_err());
        e.base_url = "http://x".into();
        assert!(e.validate().is_ok());
        e.timeout = Duration::ZERO;
        assert!(e.validate().is_err());
    }
}
