//! JSON-lines run records.
//!
//! A record is a header line, one line per completed stage, then either a
//! summary line or a failure marker. Keys are emitted in a fixed order and
//! the only wall-clock field is `elapsed_ms`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::cadr::CadrParams;
use crate::criticore::{Clause, TranscriptEntry};
use crate::diffusion::RefinePlan;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("malformed record: {0}")]
    Layout(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub run_id: String,
    pub config_digest: String,
    pub config: BTreeMap<String, String>,
    pub base_seed: u64,
    pub corrective_seed: u64,
    pub diffusion_backend: String,
    pub agent_backend: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub index: usize,
    pub stage: String,
    pub elapsed_ms: f64,
    pub skipped: bool,
    pub data: Value,
}

/// Hex SHA-256 digests of the stored latents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDigests {
    pub z_base: String,
    pub z_ref: String,
    pub z_fused: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub base_score: f64,
    pub final_score: f64,
    pub cadr: CadrParams,
    /// Plan actually executed; `None` when the corrective pass was skipped.
    pub plan: Option<RefinePlan>,
    pub hints: Vec<String>,
    pub clauses: Vec<Clause>,
    pub enhanced_prompt: Vec<String>,
    pub digests: LatentDigests,
    pub transcript: Vec<TranscriptEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureMarker {
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RecordLine {
    Header(RunHeader),
    Stage(StageRecord),
    Summary(RunSummary),
    Failure(FailureMarker),
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunEnd {
    Summary(RunSummary),
    Failure(FailureMarker),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub header: RunHeader,
    pub stages: Vec<StageRecord>,
    pub end: RunEnd,
}

impl RunRecord {
    pub fn summary(&self) -> Option<&RunSummary> {
        match &self.end {
            RunEnd::Summary(s) => Some(s),
            RunEnd::Failure(_) => None,
        }
    }

    pub fn failure(&self) -> Option<&FailureMarker> {
        match &self.end {
            RunEnd::Failure(f) => Some(f),
            RunEnd::Summary(_) => None,
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }

    /// Copy with every `elapsed_ms` set to zero.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.stages.iter_mut().for_each(|s| s.elapsed_ms = 0.0);
        r
    }

    pub fn lines(&self) -> Vec<RecordLine> {
        let mut out = vec![RecordLine::Header(self.header.clone())];
        out.extend(self.stages.iter().cloned().map(RecordLine::Stage));
        out.push(match &self.end {
            RunEnd::Summary(s) => RecordLine::Summary(s.clone()),
            RunEnd::Failure(f) => RecordLine::Failure(f.clone()),
        });
        out
    }

    pub fn to_jsonl(&self) -> String {
        self.lines()
            .iter()
            .map(|l| serde_json::to_string(l).expect("record lines serialize") + "\n")
            .collect()
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, RecordError> {
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let line = serde_json::from_str::<RecordLine>(raw)
                .map_err(|source| RecordError::Json { line: i + 1, source })?;
            lines.push(line);
        }
        let mut it = lines.into_iter();
        let header = match it.next() {
            Some(RecordLine::Header(h)) => h,
            _ => return Err(RecordError::Layout("first line is not a header".into())),
        };
        let mut stages = Vec::new();
        let mut end = None;
        for line in it {
            if end.is_some() {
                return Err(RecordError::Layout("lines after the end marker".into()));
            }
            match line {
                RecordLine::Stage(s) => stages.push(s),
                RecordLine::Summary(s) => end = Some(RunEnd::Summary(s)),
                RecordLine::Failure(f) => end = Some(RunEnd::Failure(f)),
                RecordLine::Header(_) => return Err(RecordError::Layout("second header".into())),
            }
        }
        let end = end.ok_or_else(|| RecordError::Layout("no summary or failure marker".into()))?;
        Ok(Self { header, stages, end })
    }
}
