//! Prompt critique: grounded hints, clause decomposition by an agent
//! committee, clause scoring and the budgeted top-k merge.

mod committee;
mod critic;
mod merge;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::AgentError;
use crate::lexicon::{extract, tokenize, DescriptorId, DescriptorKind};

pub use committee::{
    decompose_clauses, instruction, judge, mad_round, moa_aggregate, run_committee,
    split_clauses, CommitteeOutcome,
};
pub use critic::{score_clauses, vlm_hints, Hint, ToyCritic, VisionCritic};
pub use merge::{merge_topk, TokenOrigin};

/// Default conditioning budget in tokens.
pub const DEFAULT_BUDGET: usize = 77;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CritiError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("{stage} step {step}, agent {agent}: {source}")]
    Agent {
        stage: &'static str,
        step: usize,
        agent: u32,
        #[source]
        source: AgentError,
    },
    #[error("invalid committee: {0}")]
    Config(String),
    #[error("critic: {0}")]
    Critic(String),
}

/// Tokenized prompt with per-token salience and a token budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub tokens: Vec<String>,
    pub salience: Vec<f64>,
    pub origins: Vec<TokenOrigin>,
    pub budget: usize,
}

impl PromptBundle {
    /// Salience of prompt tokens.
    pub const BASE_SALIENCE: f64 = 0.5;

    /// Tokenizes `text`, keeping at most `budget` tokens.
    pub fn from_text(text: &str, budget: usize) -> Self {
        let mut tokens = tokenize(text);
        tokens.truncate(budget);
        let n = tokens.len();
        Self {
            tokens,
            salience: vec![Self::BASE_SALIENCE; n],
            origins: vec![TokenOrigin::Base; n],
            budget,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn descriptors(&self) -> Vec<DescriptorId> {
        extract(&self.tokens)
    }
}

/// One grounded visual clause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub id: usize,
    pub text: Vec<String>,
    pub kind: DescriptorKind,
    pub score: Option<f64>,
}

impl Clause {
    /// Kind of the first recognised descriptor; attribute when none is.
    pub fn new(id: usize, text: Vec<String>) -> Result<Self, CritiError> {
        if text.is_empty() {
            return Err(CritiError::EmptyInput("clause text"));
        }
        let kind = extract(&text)
            .first()
            .map_or(DescriptorKind::Attribute, |&d| crate::lexicon::descriptor(d).kind);
        Ok(Self {
            id,
            text,
            kind,
            score: None,
        })
    }

    pub fn descriptors(&self) -> Vec<DescriptorId> {
        extract(&self.text)
    }

    pub fn phrase(&self) -> String {
        self.text.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommitteeMode {
    Mad,
    Moa,
}

/// Committee layout. MAD uses `agents` and `rounds`; MoA uses `widths`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitteeConfig {
    pub mode: CommitteeMode,
    pub agents: usize,
    pub rounds: usize,
    pub widths: Vec<usize>,
    pub k_edit: usize,
    pub k_hints: usize,
}

impl Default for CommitteeConfig {
    fn default() -> Self {
        Self {
            mode: CommitteeMode::Moa,
            agents: 3,
            rounds: 2,
            widths: vec![5],
            k_edit: 5,
            k_hints: 5,
        }
    }
}

impl CommitteeConfig {
    pub fn mad(agents: usize, rounds: usize) -> Self {
        Self {
            mode: CommitteeMode::Mad,
            agents,
            rounds,
            ..Self::default()
        }
    }

    pub fn moa(widths: Vec<usize>) -> Self {
        Self {
            mode: CommitteeMode::Moa,
            widths,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), CritiError> {
        match self.mode {
            CommitteeMode::Mad if self.agents == 0 || self.rounds == 0 => Err(CritiError::Config(
                format!("MAD needs M >= 1 and T >= 1, got M={} T={}", self.agents, self.rounds),
            )),
            CommitteeMode::Moa if self.widths.is_empty() || self.widths.contains(&0) => Err(
                CritiError::Config(format!("MoA needs L >= 1 layers of width >= 1, got {:?}", self.widths)),
            ),
            _ if self.k_hints == 0 => Err(CritiError::Config("k_hints must be at least 1".into())),
            _ => Ok(()),
        }
    }

    /// Largest number of distinct agents taking part.
    pub fn width(&self) -> usize {
        match self.mode {
            CommitteeMode::Mad => self.agents,
            CommitteeMode::Moa => self.widths.iter().copied().max().unwrap_or(0),
        }
    }

    /// Copy with the committee width set to `n` (every MoA layer, or M).
    pub fn with_width(&self, n: usize) -> Self {
        let mut c = self.clone();
        match c.mode {
            CommitteeMode::Mad => c.agents = n,
            CommitteeMode::Moa => c.widths.iter_mut().for_each(|w| *w = n),
        }
        c
    }

    /// Backend calls one committee run makes.
    pub fn call_count(&self) -> usize {
        match self.mode {
            CommitteeMode::Mad => self.agents * self.rounds + 1,
            CommitteeMode::Moa => self.widths.iter().map(|n| n + 1).sum(),
        }
    }
}

/// One agent message of the committee transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub agent: u32,
    pub stage: String,
    pub step: usize,
    pub text: String,
}

/// Result of critiquing a base image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CritiqueReport {
    pub hints: Vec<String>,
    pub clauses: Vec<Clause>,
    pub mean_score: f64,
    pub transcript: Vec<TranscriptEntry>,
}

impl CritiqueReport {
    /// Mean of the set clause scores (0 when none is set).
    pub fn mean_of(clauses: &[Clause]) -> f64 {
        let scores: Vec<f64> = clauses.iter().filter_map(|c| c.score).collect();
        if scores.is_empty() {
            0.0
        } else {
            scores.iter().sum::<f64>() / scores.len() as f64
        }
    }
}
