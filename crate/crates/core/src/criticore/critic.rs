use serde::{Deserialize, Serialize};

use crate::diffusion::BasisBank;
use crate::latents::LatentField;
use crate::lexicon::{descriptor, DescriptorId};

use super::{Clause, CritiError, CritiqueReport, PromptBundle};

/// A grounded observation about one prompt descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hint {
    pub text: String,
    pub descriptor: DescriptorId,
    /// Calibrated mismatch in `[0, 1)`.
    pub severity: f64,
}

/// Image critic: produces hints and per-clause alignment scores.
pub trait VisionCritic: Send + Sync {
    /// Every hint the critic has for `prompt`, in any order.
    fn hints(&self, image: &LatentField, prompt: &PromptBundle) -> Result<Vec<Hint>, CritiError>;
    /// Alignment of `clause` with `image` in `[0, 1]`.
    fn score(&self, clause: &Clause, image: &LatentField) -> Result<f64, CritiError>;
}

/// Critic for decoded toy images: descriptor presence is the projection
/// coefficient on the descriptor's basis pattern, 1 when rendered.
#[derive(Debug, Clone)]
pub struct ToyCritic {
    bank: BasisBank,
}

impl ToyCritic {
    /// Mismatch above which a hint is emitted.
    pub const HINT_THRESHOLD: f64 = 0.25;
    /// Score of a clause that names no known descriptor.
    pub const UNGROUNDED_SCORE: f64 = 0.5;

    pub fn new(bank: BasisBank) -> Self {
        Self { bank }
    }

    /// Per-channel squared errors of descriptor `id` against presence 1.
    fn errors(&self, image: &LatentField, id: DescriptorId) -> Vec<f64> {
        self.bank
            .coefficients(image, id)
            .into_iter()
            .map(|c| (c - 1.0) * (c - 1.0))
            .collect()
    }

    fn check(&self, image: &LatentField) -> Result<(), CritiError> {
        if image.shape() != self.bank.shape() {
            return Err(CritiError::Critic(format!(
                "image is {}, critic expects {}",
                image.shape(),
                self.bank.shape()
            )));
        }
        Ok(())
    }
}

impl VisionCritic for ToyCritic {
    fn hints(&self, image: &LatentField, prompt: &PromptBundle) -> Result<Vec<Hint>, CritiError> {
        self.check(image)?;
        let mut out = Vec::new();
        for id in prompt.descriptors() {
            let errs = self.errors(image, id);
            let m = (errs.iter().sum::<f64>() / errs.len() as f64).sqrt();
            if m > Self::HINT_THRESHOLD {
                let coefs = self.bank.coefficients(image, id);
                let mean = coefs.iter().sum::<f64>() / coefs.len() as f64;
                let label = if mean < 0.5 { "missing" } else { "malformed" };
                out.push(Hint {
                    text: format!("{label} {}", descriptor(id).phrase),
                    descriptor: id,
                    severity: m / (1.0 + m),
                });
            }
        }
        Ok(out)
    }

    fn score(&self, clause: &Clause, image: &LatentField) -> Result<f64, CritiError> {
        self.check(image)?;
        let ids = clause.descriptors();
        if ids.is_empty() {
            return Ok(Self::UNGROUNDED_SCORE);
        }
        let errs: Vec<f64> = ids.iter().flat_map(|&id| self.errors(image, id)).collect();
        let mse = errs.iter().sum::<f64>() / errs.len() as f64;
        Ok(1.0 / (1.0 + mse))
    }
}

/// At most `k_hints` hints, most severe first (ties by descriptor id),
/// after dropping those rejected by `keep`.
pub fn vlm_hints(
    image: &LatentField,
    prompt: &PromptBundle,
    critic: &dyn VisionCritic,
    k_hints: usize,
    keep: &dyn Fn(&Hint) -> bool,
) -> Result<Vec<Hint>, CritiError> {
    if k_hints == 0 {
        return Err(CritiError::Config("k_hints must be at least 1".into()));
    }
    let mut hints: Vec<Hint> = critic.hints(image, prompt)?.into_iter().filter(|h| keep(h)).collect();
    hints.sort_by(|a, b| {
        b.severity
            .total_cmp(&a.severity)
            .then(a.descriptor.cmp(&b.descriptor))
    });
    hints.truncate(k_hints);
    Ok(hints)
}

/// Scores every clause against `image`; hints and transcript are left empty.
pub fn score_clauses(
    clauses: &[Clause],
    image: &LatentField,
    critic: &dyn VisionCritic,
) -> Result<CritiqueReport, CritiError> {
    if clauses.is_empty() {
        return Err(CritiError::EmptyInput("clauses"));
    }
    let scored = clauses
        .iter()
        .map(|c| {
            let s = critic.score(c, image)?;
            if !(0.0..=1.0).contains(&s) {
                return Err(CritiError::Critic(format!("score {s} outside [0, 1]")));
            }
            Ok(Clause {
                score: Some(s),
                ..c.clone()
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CritiqueReport {
        hints: Vec::new(),
        mean_score: CritiqueReport::mean_of(&scored),
        clauses: scored,
        transcript: Vec::new(),
    })
}
