//! Analytic stand-in for the noise predictor.
//!
//! Every vocabulary descriptor owns one basis pattern: a per-channel 2-D
//! cosine `cos(2π (ky y / H + kx x / W) + c π / 3)`. Entities sit at low
//! frequencies (layout), attributes and relations near the horizontal
//! Nyquist band (detail), outside the largest CADR passband. Patterns at
//! distinct frequencies are orthogonal, so a descriptor's presence in an
//! image is read back by projection.
//!
//! The conditional target is `γ Σ e_j b_j / (1 + w)`, so that the guided
//! prediction `(1 + w) ε_c - w ε_u` has the fixed point `γ Σ e_j b_j`
//! whatever the guidance weight; the null conditioning targets zero.

use std::sync::Arc;

use crate::latents::{LatentField, Shape, VaeScale};
use crate::lexicon::{DescriptorId, VOCABULARY};

use super::{Conditioning, DiffusionError, NoisePredictor, VarianceSchedule};

/// Smallest toy latent height; leaves room for the detail rows.
pub const TOY_MIN_HEIGHT: usize = 24;
/// Smallest toy latent width; keeps detail columns outside the passband.
pub const TOY_MIN_WIDTH: usize = 48;

const ENTITY_COUNT: usize = 12;

/// Fixed bank of orthogonal cosine patterns, one per descriptor.
#[derive(Debug, Clone)]
pub struct BasisBank {
    shape: Shape,
    patterns: Arc<Vec<Vec<f64>>>,
    norms: Arc<Vec<f64>>,
}

impl BasisBank {
    pub fn new(shape: Shape) -> Result<Self, DiffusionError> {
        if shape.height < TOY_MIN_HEIGHT || shape.width < TOY_MIN_WIDTH {
            return Err(DiffusionError::ToyShape(shape));
        }
        let (h, w) = (shape.height as f64, shape.width as f64);
        let mut patterns = Vec::with_capacity(VOCABULARY.len());
        let mut norms = Vec::with_capacity(VOCABULARY.len());
        for id in 0..VOCABULARY.len() {
            let (ky, kx) = Self::frequency_for(id, shape);
            let mut values = Vec::with_capacity(shape.len());
            for c in 0..shape.channels {
                let phase = c as f64 * std::f64::consts::PI / 3.0;
                for y in 0..shape.height {
                    for x in 0..shape.width {
                        let arg = ky as f64 * y as f64 / h + kx as f64 * x as f64 / w;
                        values.push((std::f64::consts::TAU * arg + phase).cos());
                    }
                }
            }
            norms.push(
                values[..shape.plane()].iter().map(|v| v * v).sum::<f64>(),
            );
            patterns.push(values);
        }
        Ok(Self {
            shape,
            patterns: Arc::new(patterns),
            norms: Arc::new(norms),
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// `(ky, kx)` of the pattern owned by descriptor `id`.
    pub fn frequency(&self, id: DescriptorId) -> (usize, usize) {
        Self::frequency_for(id, self.shape)
    }

    fn frequency_for(id: DescriptorId, shape: Shape) -> (usize, usize) {
        if id < ENTITY_COUNT {
            (1 + id % 3, 1 + id / 3)
        } else {
            let d = id - ENTITY_COUNT;
            (d / 3, shape.width / 2 - 1 - d % 3)
        }
    }

    pub fn pattern(&self, id: DescriptorId) -> &[f64] {
        &self.patterns[id]
    }

    /// `Σ_j weights[j] b_j` as a field.
    pub fn synthesize(&self, weights: &[f64]) -> Result<LatentField, DiffusionError> {
        if weights.len() != VOCABULARY.len() {
            return Err(DiffusionError::Embedding {
                expected: VOCABULARY.len(),
                actual: weights.len(),
            });
        }
        let mut values = vec![0.0; self.shape.len()];
        for (j, &e) in weights.iter().enumerate() {
            if e != 0.0 {
                for (v, b) in values.iter_mut().zip(self.pattern(j)) {
                    *v += e * b;
                }
            }
        }
        Ok(LatentField::new(self.shape, values)?)
    }

    /// Projection coefficient of channel `c` of `image` onto pattern `id`.
    pub fn coefficient(&self, image: &LatentField, id: DescriptorId, c: usize) -> f64 {
        let plane = self.shape.plane();
        let b = &self.pattern(id)[c * plane..(c + 1) * plane];
        let dot: f64 = image.channel(c).iter().zip(b).map(|(x, y)| x * y).sum();
        dot / self.norms[id]
    }

    /// Per-channel coefficients of pattern `id`.
    pub fn coefficients(&self, image: &LatentField, id: DescriptorId) -> Vec<f64> {
        (0..self.shape.channels)
            .map(|c| self.coefficient(image, id, c))
            .collect()
    }
}

/// Exact noise predictor for the toy backbone.
#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    bank: BasisBank,
    scale: VaeScale,
}

impl ToyDenoiser {
    pub fn new(shape: Shape, scale: VaeScale) -> Result<Self, DiffusionError> {
        Ok(Self {
            bank: BasisBank::new(shape)?,
            scale,
        })
    }

    pub fn bank(&self) -> &BasisBank {
        &self.bank
    }

    pub fn scale(&self) -> VaeScale {
        self.scale
    }

    /// Pattern the conditional prediction points at: `γ Σ e_j b_j / (1 + w)`.
    pub fn target(&self, cond: &Conditioning) -> Result<LatentField, DiffusionError> {
        if cond.is_null() {
            return Ok(LatentField::zeros(self.bank.shape()));
        }
        let k = self.scale.gamma() / (1.0 + cond.guidance());
        let weights: Vec<f64> = cond.embedding().iter().map(|e| e * k).collect();
        self.bank.synthesize(&weights)
    }

    /// Fixed point of the guided sampler: `γ Σ e_j b_j`.
    pub fn guided_target(&self, cond: &Conditioning) -> Result<LatentField, DiffusionError> {
        if cond.is_null() {
            return Ok(LatentField::zeros(self.bank.shape()));
        }
        let g = self.scale.gamma();
        let weights: Vec<f64> = cond.embedding().iter().map(|e| e * g).collect();
        self.bank.synthesize(&weights)
    }
}

impl NoisePredictor for ToyDenoiser {
    fn predict_noise(
        &self,
        z_t: &LatentField,
        alpha_bar: f64,
        cond: &Conditioning,
    ) -> Result<LatentField, DiffusionError> {
        if alpha_bar >= 1.0 {
            return Err(DiffusionError::DegenerateStep { alpha_bar });
        }
        let target = self.target(cond)?;
        let (sa, sn) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
        Ok(z_t.zip_map(&target, |z, x| (z - sa * x) / sn)?)
    }
}

/// `ε̂ = (z_t - √ᾱ_t target(cond)) / √(1 - ᾱ_t)` at step `t` of `sched`.
pub fn toy_denoiser(
    denoiser: &ToyDenoiser,
    z_t: &LatentField,
    t: usize,
    cond: &Conditioning,
    sched: &VarianceSchedule,
) -> Result<LatentField, DiffusionError> {
    denoiser.predict_noise(z_t, sched.alpha_bar(t)?, cond)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{forward_noise, make_schedule, predict_x0};
    use crate::latents::sample_gaussian_latent;
    use crate::lexicon::{lookup, DescriptorKind};
    use crate::spectral::{build_lowpass_mask, TaperSpec};

    fn shape() -> Shape {
        Shape::new(2, 24, 48).unwrap()
    }

    fn cond(phrases: &[&str], w: f64) -> Conditioning {
        let ids: Vec<_> = phrases.iter().map(|p| lookup(p).unwrap()).collect();
        Conditioning::from_descriptors(&ids, w).unwrap()
    }

    #[test]
    fn entity_block_precedes_details() {
        for (i, d) in VOCABULARY.iter().enumerate() {
            assert_eq!(d.kind == DescriptorKind::Entity, i < ENTITY_COUNT, "{}", d.phrase);
        }
    }

    #[test]
    fn patterns_are_orthonormal_under_projection() {
        let bank = BasisBank::new(shape()).unwrap();
        for i in 0..VOCABULARY.len() {
            let img = LatentField::new(shape(), bank.pattern(i).to_vec()).unwrap();
            for j in 0..VOCABULARY.len() {
                for c in 0..2 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((bank.coefficient(&img, j, c) - want).abs() < 1e-9, "{i} on {j}");
                }
            }
        }
    }

    #[test]
    fn details_sit_outside_the_widest_passband() {
        for s in [shape(), Shape::new(4, 64, 64).unwrap()] {
            let bank = BasisBank::new(s).unwrap();
            let mask = build_lowpass_mask(s.height, s.width, 0.85, TaperSpec::default()).unwrap();
            let low = build_lowpass_mask(s.height, s.width, 0.60, TaperSpec::default()).unwrap();
            for id in 0..VOCABULARY.len() {
                let (ky, kx) = bank.frequency(id);
                let w = mask.weight_at_frequency(ky as isize, kx as isize);
                let wl = low.weight_at_frequency(ky as isize, kx as isize);
                if id < ENTITY_COUNT {
                    assert_eq!(wl, 1.0, "entity {id}");
                } else {
                    assert_eq!(w, 0.0, "detail {id}");
                }
            }
        }
    }

    #[test]
    fn small_latents_rejected() {
        assert!(BasisBank::new(Shape::new(1, 8, 8).unwrap()).is_err());
    }

    #[test]
    fn recovers_the_injected_noise() {
        let d = ToyDenoiser::new(shape(), VaeScale::SD15).unwrap();
        let s = make_schedule(20, 1e-4, 0.02).unwrap();
        let c = cond(&["fox", "orange"], 2.0);
        let n = sample_gaussian_latent(2, 24, 48, 1).unwrap();
        let zt = forward_noise(&d.target(&c).unwrap(), 7, &s, &n).unwrap();
        let eps = toy_denoiser(&d, &zt, 7, &c, &s).unwrap();
        assert!(eps.max_abs_diff(&n) < 1e-9);
    }

    #[test]
    fn null_target_is_zero() {
        let d = ToyDenoiser::new(shape(), VaeScale::SD15).unwrap();
        let s = make_schedule(20, 1e-4, 0.02).unwrap();
        let z = sample_gaussian_latent(2, 24, 48, 2).unwrap();
        let eps = toy_denoiser(&d, &z, 5, &Conditioning::null(0.0), &s).unwrap();
        let a = s.alpha_bar(5).unwrap();
        let want = z.map(|v| v / (1.0 - a).sqrt()).unwrap();
        assert!(eps.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn x0_of_prediction_is_target() {
        let d = ToyDenoiser::new(shape(), VaeScale::SD15).unwrap();
        let s = VarianceSchedule::from_alpha_bars(&[0.95, 0.9]).unwrap();
        let c = cond(&["castle", "ancient", "beside river"], 0.0);
        let z = sample_gaussian_latent(2, 24, 48, 3).unwrap();
        let eps = toy_denoiser(&d, &z, 2, &c, &s).unwrap();
        let x0 = predict_x0(&z, 2, &eps, &s).unwrap();
        assert!(x0.max_abs_diff(&d.target(&c).unwrap()) < 1e-7);
    }

    #[test]
    fn degenerate_level_rejected() {
        let d = ToyDenoiser::new(shape(), VaeScale::SD15).unwrap();
        let z = LatentField::zeros(shape());
        assert!(matches!(
            d.predict_noise(&z, 1.0, &Conditioning::null(0.0)),
            Err(DiffusionError::DegenerateStep { .. })
        ));
    }
}
