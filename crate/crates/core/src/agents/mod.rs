//! Agent backends: deterministic mock agents and a chat-completion client.

mod http;
mod mock;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{http_complete, AgentEndpoint, HttpBackend, API_KEY_ENV};
pub use mock::{mock_respond, MockBackend, EMPTY_RESPONSE};

/// System prompt of a clause proposer.
pub const PROPOSER_PROMPT: &str = "You decompose an image prompt and critic hints into short grounded visual clauses. Reply with one comma-separated list of clauses and nothing else.";
/// System prompt of a layer aggregator.
pub const AGGREGATOR_PROMPT: &str = "You merge the candidate clause lists below into one deduplicated comma-separated list, keeping first-seen order. Reply with the list only.";
/// System prompt of the debate judge.
pub const JUDGE_PROMPT: &str = "You select the candidate clause list with the best coverage of the prompt and reply with it verbatim.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("agent {agent}: HTTP status {status}: {body}")]
    Status { agent: u32, status: u16, body: String },
    #[error("agent {agent}: timed out after {attempts} attempt(s)")]
    Timeout { agent: u32, attempts: u32 },
    #[error("agent {agent}: transport failure after {attempts} attempt(s): {message}")]
    Transport {
        agent: u32,
        attempts: u32,
        message: String,
    },
    #[error("agent {agent}: malformed response: {message}")]
    Protocol { agent: u32, message: String },
    #[error("agent request has no messages")]
    EmptyRequest,
    #[error("agent endpoint: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl AgentRequest {
    pub const DEFAULT_MAX_TOKENS: u32 = 256;

    pub fn new(messages: Vec<Message>) -> Result<Self, AgentError> {
        if messages.is_empty() {
            return Err(AgentError::EmptyRequest);
        }
        Ok(Self {
            messages,
            temperature: 0.0,
            max_tokens: Self::DEFAULT_MAX_TOKENS,
        })
    }

    /// System prompt plus one user message.
    pub fn with_system(system: &str, user: impl Into<String>) -> Self {
        Self {
            messages: vec![Message::system(system), Message::user(user)],
            temperature: 0.0,
            max_tokens: Self::DEFAULT_MAX_TOKENS,
        }
    }

    pub fn system_prompt(&self) -> Option<&str> {
        self.messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
    }

    /// Concatenated user content, one message per line.
    pub fn user_text(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub text: String,
    #[serde(with = "duration_ms")]
    pub latency: Duration,
    pub usage: Usage,
    pub attempts: u32,
    /// Set when a failed remote call was answered by the mock fallback.
    pub degraded: bool,
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64() * 1e3)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let ms = f64::deserialize(d)?;
        Ok(Duration::from_secs_f64(ms.max(0.0) / 1e3))
    }
}

/// Anything that answers agent requests. Agent ids are 1-based.
pub trait AgentBackend: Send + Sync {
    fn name(&self) -> &str;
    fn respond(&self, agent: u32, request: &AgentRequest) -> Result<AgentResponse, AgentError>;
}

/// Answers with `fallback` whenever `primary` fails, marking the response degraded.
pub struct Degrading<P> {
    primary: P,
    fallback: MockBackend,
}

impl<P: AgentBackend> Degrading<P> {
    pub fn new(primary: P) -> Self {
        Self {
            primary,
            fallback: MockBackend,
        }
    }
}

impl<P: AgentBackend> AgentBackend for Degrading<P> {
    fn name(&self) -> &str {
        self.primary.name()
    }

    fn respond(&self, agent: u32, request: &AgentRequest) -> Result<AgentResponse, AgentError> {
        match self.primary.respond(agent, request) {
            Ok(r) => Ok(r),
            Err(_) => {
                let mut r = self.fallback.respond(agent, request)?;
                r.degraded = true;
                Ok(r)
            }
        }
    }
}
