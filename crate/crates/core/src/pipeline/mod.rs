//! End-to-end refinement runs, run records and experiment harnesses.

mod config;
mod image;
mod record;
mod run;
mod sweep;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentBackend, AgentError, Degrading, HttpBackend, MockBackend};
use crate::cadr::CadrError;
use crate::criticore::{CritiError, ToyCritic, VisionCritic};
use crate::diffusion::{BasisBank, DiffusionBackend, DiffusionError, ExternalBackend, ToyBackend};
use crate::spectral::SpectralError;

pub use config::{known_keys, AgentBackendKind, ConfigError, DiffusionBackendKind, PipelineConfig};
pub use image::write_ppm;
pub use record::{
    FailureMarker, LatentDigests, RecordError, RecordLine, RunEnd, RunHeader, RunRecord,
    RunSummary, StageRecord,
};
pub use run::{
    coverage, prompt_clauses, run_critifusion, run_from_base, run_id, RunOptions, RunOutcome,
};
pub use sweep::{
    ablate, reference_clauses, sweep_ensemble, sweep_k, SweepAxis, SweepRow, SweepTable,
};

/// Stage names in execution order.
pub const STAGES: [&str; 11] = [
    "base_sample",
    "decode",
    "vlm_hints",
    "decompose_clauses",
    "aggregate",
    "score_clauses",
    "merge_topk",
    "cadr",
    "img2img_refine",
    "spec_fuse",
    "decode_final",
];

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Critique(#[from] CritiError),
    #[error(transparent)]
    Cadr(#[from] CadrError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid run options: {0}")]
    Options(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: StageError,
    },
    #[error("agent backend: {0}")]
    Agent(#[from] AgentError),
    #[error("diffusion backend: {0}")]
    Backend(#[from] DiffusionError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Components switched off for an ablation. `Default` disables nothing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ComponentMask {
    /// Critic hints: the hint stage returns nothing.
    pub vlm: bool,
    /// Committee and merge: clauses come from the prompt, `c̃ = c`.
    pub multi_llm: bool,
    /// Spectral fusion: `z_final = z_ref`.
    pub specfusion: bool,
}

impl ComponentMask {
    pub const FULL: Self = Self {
        vlm: false,
        multi_llm: false,
        specfusion: false,
    };

    /// The three single-component ablations.
    pub fn singles() -> [Self; 3] {
        [
            Self { vlm: true, ..Self::FULL },
            Self { multi_llm: true, ..Self::FULL },
            Self { specfusion: true, ..Self::FULL },
        ]
    }

    /// Parses a comma list of `vlm`, `multi_llm`, `specfusion`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut m = Self::FULL;
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "vlm" => m.vlm = true,
                "multi_llm" => m.multi_llm = true,
                "specfusion" => m.specfusion = true,
                other => return Err(format!("unknown component {other:?}")),
            }
        }
        Ok(m)
    }

    fn rank(self) -> u8 {
        self.vlm as u8 | (self.multi_llm as u8) << 1 | (self.specfusion as u8) << 2
    }
}

impl fmt::Display for ComponentMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Self::FULL {
            return f.write_str("full");
        }
        let names: Vec<&str> = [(self.vlm, "vlm"), (self.multi_llm, "multi_llm"), (self.specfusion, "specfusion")]
            .into_iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| n)
            .collect();
        write!(f, "w/o {}", names.join("+"))
    }
}

/// The three collaborators of a run.
pub struct Backends {
    pub diffusion: Box<dyn DiffusionBackend>,
    pub agents: Box<dyn AgentBackend>,
    pub critic: Box<dyn VisionCritic>,
}

impl Backends {
    /// Builds the backends named in `config`. The toy critic judges every
    /// backbone's output.
    pub fn from_config(config: &PipelineConfig) -> Result<Self, PipelineError> {
        let diffusion: Box<dyn DiffusionBackend> = match config.diffusion_backend {
            DiffusionBackendKind::Toy => Box::new(ToyBackend::new(config.shape, config.vae_scale)?),
            DiffusionBackendKind::External => {
                let (program, args) = config
                    .backend_command
                    .split_first()
                    .ok_or_else(|| ConfigError::Invalid("backend.command is empty".into()))?;
                Box::new(ExternalBackend::new(program, args.to_vec()))
            }
        };
        let agents: Box<dyn AgentBackend> = match config.agent_backend {
            AgentBackendKind::Mock => Box::new(MockBackend),
            AgentBackendKind::Http if config.degrade => {
                Box::new(Degrading::new(HttpBackend::new(config.endpoint.clone())?))
            }
            AgentBackendKind::Http => Box::new(HttpBackend::new(config.endpoint.clone())?),
        };
        let critic = Box::new(ToyCritic::new(BasisBank::new(config.shape)?));
        Ok(Self {
            diffusion,
            agents,
            critic,
        })
    }
}
