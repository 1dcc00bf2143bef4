//! Schedules, reverse samplers, guidance and the corrective img2img pass.
//!
//! Steps are 1-based: a `T`-step schedule covers `t = 1..=T` and `ᾱ_0 = 1`.

mod backend;
mod ops;
mod sampler;
mod schedule;
mod toy;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latents::{FormatError, LatentError, Shape};
use crate::lexicon::{extract_text, DescriptorId, VOCABULARY};

pub use backend::{
    BaseRequest, DiffusionBackend, ExternalBackend, RefineRequest, ToyBackend,
};
pub use ops::{cfg_combine, ddim_step, ddpm_step, forward_noise, predict_x0};
pub use sampler::{
    base_sample, corrective_seed, guided_noise, img2img_refine, lambda_to_k, refine_with_plan,
    strength_to_start, RefineMode, RefinePlan, SamplerKind, StrengthMap,
    CORRECTIVE_SEED_OFFSET,
};
pub use schedule::{make_schedule, ScheduleParams, VarianceSchedule};
pub use toy::{toy_denoiser, BasisBank, ToyDenoiser, TOY_MIN_HEIGHT, TOY_MIN_WIDTH};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("step {t} outside 1..={steps}")]
    StepRange { t: usize, steps: usize },
    #[error("degenerate step: alpha_bar = {alpha_bar}")]
    DegenerateStep { alpha_bar: f64 },
    #[error("singular step {t}: alpha_bar = 0")]
    SingularStep { t: usize },
    #[error("k = {k} exceeds T' = {t_prime}")]
    StrengthRange { k: usize, t_prime: usize },
    #[error("guidance weight {0} must be finite and >= 0")]
    Guidance(f64),
    #[error("toy backbone needs height >= {TOY_MIN_HEIGHT} and width >= {TOY_MIN_WIDTH}, got {0}")]
    ToyShape(Shape),
    #[error("embedding has {actual} entries, expected {expected}")]
    Embedding { expected: usize, actual: usize },
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error("latent exchange: {0}")]
    Format(#[from] FormatError),
    #[error("backend: {0}")]
    Backend(String),
}

/// Maps a CFG scale `g` to the guidance weight `w = max(g - 1, 0)`.
pub fn cfg_weight(g: f64) -> f64 {
    (g - 1.0).max(0.0)
}

/// Prompt conditioning: descriptor mixing weights plus guidance weight `w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    embedding: Vec<f64>,
    guidance: f64,
    is_null: bool,
}

impl Conditioning {
    pub fn new(embedding: Vec<f64>, guidance: f64) -> Result<Self, DiffusionError> {
        if embedding.len() != VOCABULARY.len() {
            return Err(DiffusionError::Embedding {
                expected: VOCABULARY.len(),
                actual: embedding.len(),
            });
        }
        if embedding.iter().any(|e| !e.is_finite()) {
            return Err(DiffusionError::Schedule("non-finite embedding".into()));
        }
        if !(guidance >= 0.0 && guidance.is_finite()) {
            return Err(DiffusionError::Guidance(guidance));
        }
        Ok(Self {
            embedding,
            guidance,
            is_null: false,
        })
    }

    /// Unit weight on each listed descriptor.
    pub fn from_descriptors(ids: &[DescriptorId], guidance: f64) -> Result<Self, DiffusionError> {
        let mut embedding = vec![0.0; VOCABULARY.len()];
        for &id in ids {
            embedding[id] = 1.0;
        }
        Self::new(embedding, guidance)
    }

    /// Descriptors found in `text`, guidance from the CFG scale `g`.
    pub fn from_prompt(text: &str, g: f64) -> Result<Self, DiffusionError> {
        Self::from_descriptors(&extract_text(text), cfg_weight(g))
    }

    /// The empty prompt `∅`.
    pub fn null(guidance: f64) -> Self {
        Self {
            embedding: vec![0.0; VOCABULARY.len()],
            guidance,
            is_null: true,
        }
    }

    pub fn unconditional(&self) -> Self {
        Self::null(self.guidance)
    }

    pub fn with_guidance(&self, guidance: f64) -> Result<Self, DiffusionError> {
        if !(guidance >= 0.0 && guidance.is_finite()) {
            return Err(DiffusionError::Guidance(guidance));
        }
        Ok(Self {
            guidance,
            ..self.clone()
        })
    }

    pub fn embedding(&self) -> &[f64] {
        &self.embedding
    }

    pub fn guidance(&self) -> f64 {
        self.guidance
    }

    pub fn is_null(&self) -> bool {
        self.is_null
    }
}

/// Anything that predicts the noise in `z_t` at noise level `ᾱ`.
pub trait NoisePredictor: Send + Sync {
    fn predict_noise(
        &self,
        z_t: &crate::latents::LatentField,
        alpha_bar: f64,
        cond: &Conditioning,
    ) -> Result<crate::latents::LatentField, DiffusionError>;
}
