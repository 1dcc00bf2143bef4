//! Offline agents whose replies are a pure function of (agent id, request).
//!
//! The role is read from the system prompt:
//! * proposer: descriptors found in the user text, each entity followed by
//!   its implications under the agent's lexicon table;
//! * aggregator: first-seen union of the descriptors on the
//!   `candidate <id>: ...` lines;
//! * judge: the candidate line with the most descriptors, ties to the
//!   lowest id, returned verbatim.

use std::time::Duration;

use crate::lexicon::{descriptor, extract_text, implications, render, DescriptorKind};

use super::{
    AgentBackend, AgentError, AgentRequest, AgentResponse, Usage, AGGREGATOR_PROMPT, JUDGE_PROMPT,
};

/// Reply used when no descriptor survives.
pub const EMPTY_RESPONSE: &str = "<none>";

pub fn mock_respond(agent: u32, request: &AgentRequest) -> AgentResponse {
    let user = request.user_text();
    let text = match request.system_prompt() {
        Some(AGGREGATOR_PROMPT) => aggregate(&user),
        Some(JUDGE_PROMPT) => judge(&user),
        _ => propose(agent, &user),
    };
    let prompt_tokens = request
        .messages
        .iter()
        .map(|m| m.content.split_whitespace().count() as u64)
        .sum();
    let completion_tokens = text.split_whitespace().count() as u64;
    AgentResponse {
        text,
        latency: Duration::ZERO,
        usage: Usage {
            prompt_tokens,
            completion_tokens,
            total_tokens: prompt_tokens + completion_tokens,
        },
        attempts: 1,
        degraded: false,
    }
}

fn or_empty(s: String) -> String {
    if s.is_empty() {
        EMPTY_RESPONSE.to_owned()
    } else {
        s
    }
}

fn propose(agent: u32, user: &str) -> String {
    let mut out = Vec::new();
    for id in extract_text(user) {
        if !out.contains(&id) {
            out.push(id);
        }
        if descriptor(id).kind == DescriptorKind::Entity {
            for imp in implications(agent, id) {
                if !out.contains(&imp) {
                    out.push(imp);
                }
            }
        }
    }
    or_empty(render(&out))
}

/// `(id, text)` of every `candidate <id>: text` line.
pub(crate) fn candidate_lines(user: &str) -> Vec<(u32, &str)> {
    user.lines()
        .filter_map(|line| {
            let rest = line.trim().strip_prefix("candidate ")?;
            let (id, text) = rest.split_once(':')?;
            Some((id.trim().parse().ok()?, text.trim()))
        })
        .collect()
}

fn aggregate(user: &str) -> String {
    let mut out = Vec::new();
    for (_, text) in candidate_lines(user) {
        for id in extract_text(text) {
            if !out.contains(&id) {
                out.push(id);
            }
        }
    }
    or_empty(render(&out))
}

fn judge(user: &str) -> String {
    let mut best: Option<(usize, u32, &str)> = None;
    for (id, text) in candidate_lines(user) {
        let coverage = extract_text(text).len();
        let better = match best {
            None => true,
            Some((c, bid, _)) => coverage > c || (coverage == c && id < bid),
        };
        if better {
            best = Some((coverage, id, text));
        }
    }
    best.map_or_else(|| EMPTY_RESPONSE.to_owned(), |(_, _, t)| t.to_owned())
}

/// Backend answering every request with [`mock_respond`].
#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

impl AgentBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn respond(&self, agent: u32, request: &AgentRequest) -> Result<AgentResponse, AgentError> {
        Ok(mock_respond(agent, request))
    }
}
