use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cadr::CadrParams;
use crate::latents::{LatentField, Shape};
use crate::rng::GaussianStream;

use super::{
    cfg_combine, cfg_weight, ddim_step, ddpm_step, forward_noise, Conditioning, DiffusionError,
    NoisePredictor, VarianceSchedule,
};

/// Offset between the base seed and the corrective-pass seed.
pub const CORRECTIVE_SEED_OFFSET: u64 = 999;

pub fn corrective_seed(seed: u64) -> u64 {
    seed.wrapping_add(CORRECTIVE_SEED_OFFSET)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Ddim,
    Ddpm,
}

impl FromStr for SamplerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ddim" => Ok(Self::Ddim),
            "ddpm" => Ok(Self::Ddpm),
            other => Err(format!("unknown sampler {other:?} (expected ddim or ddpm)")),
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ddim => "ddim",
            Self::Ddpm => "ddpm",
        })
    }
}

/// How the corrective pass moves away from `z_base`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineMode {
    /// Re-noise to a partial depth, then denoise the last `k` steps.
    Img2Img,
    /// Per-step convex blend `(1 - α) z + α Step(z) + √β_t ε`, `α = λ`.
    Blend,
}

impl FromStr for RefineMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "img2img" => Ok(Self::Img2Img),
            "blend" => Ok(Self::Blend),
            other => Err(format!("unknown refine mode {other:?} (expected img2img or blend)")),
        }
    }
}

impl fmt::Display for RefineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Img2Img => "img2img",
            Self::Blend => "blend",
        })
    }
}

/// Guided noise estimate at level `ᾱ`; skips the unconditional call when `w = 0`.
pub fn guided_noise(
    predictor: &dyn NoisePredictor,
    z_t: &LatentField,
    alpha_bar: f64,
    cond: &Conditioning,
) -> Result<LatentField, DiffusionError> {
    let eps_c = predictor.predict_noise(z_t, alpha_bar, cond)?;
    if cond.guidance() == 0.0 || cond.is_null() {
        return Ok(eps_c);
    }
    let eps_u = predictor.predict_noise(z_t, alpha_bar, &cond.unconditional())?;
    cfg_combine(&eps_c, &eps_u, cond.guidance())
}

/// Full reverse chain from `z_T ~ N(0, I)` drawn from `seed`. DDPM noise is
/// drawn from the same stream after `z_T`.
pub fn base_sample(
    predictor: &dyn NoisePredictor,
    cond: &Conditioning,
    sched: &VarianceSchedule,
    sampler: SamplerKind,
    shape: Shape,
    seed: u64,
) -> Result<LatentField, DiffusionError> {
    let mut stream = GaussianStream::new(seed);
    let mut z = stream.next_field(shape)?;
    for t in (1..=sched.steps()).rev() {
        let eps = guided_noise(predictor, &z, sched.alpha_bar(t)?, cond)?;
        z = match sampler {
            SamplerKind::Ddim => ddim_step(&z, t, &eps, sched)?,
            SamplerKind::Ddpm => {
                let noise = stream.next_field(shape)?;
                ddpm_step(&z, t, &eps, sched, &noise)?
            }
        };
    }
    Ok(z)
}

/// Corrective depth derived from the last-`k`-steps parameterisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrengthMap {
    pub k: usize,
    pub t_prime: usize,
    pub strength: f64,
    /// Index into the descending step list where denoising starts.
    pub t0: usize,
}

impl StrengthMap {
    /// Noise level (1-based step of the corrective schedule) the pass starts from.
    pub fn start_level(&self) -> usize {
        self.t_prime - self.t0
    }
}

/// `strength = clip(k / T', 0.01, 0.95)`, `t0 = ⌊(1 - strength) T'⌋`.
///
/// `t0` is computed in integer arithmetic so that exact products such as
/// `0.1 * 50` do not floor to the wrong side.
pub fn strength_to_start(k: usize, t_prime: usize) -> Result<StrengthMap, DiffusionError> {
    if t_prime == 0 || k > t_prime {
        return Err(DiffusionError::StrengthRange { k, t_prime });
    }
    let t0 = if 100 * k >= 95 * t_prime {
        5 * t_prime / 100
    } else if 100 * k <= t_prime {
        99 * t_prime / 100
    } else {
        t_prime - k
    };
    Ok(StrengthMap {
        k,
        t_prime,
        strength: (k as f64 / t_prime as f64).clamp(0.01, 0.95),
        t0,
    })
}

/// `k = round(λ T')`, half-up, capped at `T'`.
pub fn lambda_to_k(lambda: f64, t_prime: usize) -> usize {
    ((lambda.max(0.0) * t_prime as f64 + 0.5).floor() as usize).min(t_prime)
}

/// Resolved corrective-pass settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinePlan {
    pub t_prime: usize,
    pub k: usize,
    /// CFG scale `g`.
    pub guidance: f64,
    /// `λ`, the blend weight in [`RefineMode::Blend`].
    pub lambda: f64,
}

impl RefinePlan {
    pub fn from_params(params: &CadrParams) -> Self {
        let t_prime = params.t_prime as usize;
        Self {
            t_prime,
            k: lambda_to_k(params.lambda, t_prime),
            guidance: params.guidance,
            lambda: params.lambda,
        }
    }

    pub fn with_k(self, k: usize) -> Self {
        Self { k, ..self }
    }
}

/// Corrective pass under `cond` with the CADR parameters.
pub fn img2img_refine(
    predictor: &dyn NoisePredictor,
    z_base: &LatentField,
    cond: &Conditioning,
    params: &CadrParams,
    sched: &VarianceSchedule,
    seed: u64,
    mode: RefineMode,
) -> Result<LatentField, DiffusionError> {
    refine_with_plan(predictor, z_base, cond, &RefinePlan::from_params(params), sched, seed, mode)
}

/// Corrective pass with an explicit plan. `seed` is the base seed; noise
/// comes from [`corrective_seed`]. `T' = 0` or `k = 0` returns `z_base`.
pub fn refine_with_plan(
    predictor: &dyn NoisePredictor,
    z_base: &LatentField,
    cond: &Conditioning,
    plan: &RefinePlan,
    sched: &VarianceSchedule,
    seed: u64,
    mode: RefineMode,
) -> Result<LatentField, DiffusionError> {
    if plan.t_prime == 0 {
        return Ok(z_base.clone());
    }
    let corrective = sched.respaced(plan.t_prime)?;
    let cond = cond.with_guidance(cfg_weight(plan.guidance))?;
    let mut stream = GaussianStream::new(corrective_seed(seed));
    let shape = z_base.shape();
    match mode {
        RefineMode::Img2Img => {
            if plan.k == 0 {
                return Ok(z_base.clone());
            }
            let map = strength_to_start(plan.k, plan.t_prime)?;
            let start = map.start_level();
            let noise = stream.next_field(shape)?;
            let mut z = forward_noise(z_base, start, &corrective, &noise)?;
            for t in (1..=start).rev() {
                let eps = guided_noise(predictor, &z, corrective.alpha_bar(t)?, &cond)?;
                z = ddim_step(&z, t, &eps, &corrective)?;
            }
            Ok(z)
        }
        RefineMode::Blend => {
            let alpha = plan.lambda.clamp(0.0, 1.0);
            let mut z = z_base.clone();
            for t in (1..=plan.t_prime).rev() {
                let eps = guided_noise(predictor, &z, corrective.alpha_bar(t)?, &cond)?;
                let step = ddim_step(&z, t, &eps, &corrective)?;
                let noise = stream.next_field(shape)?;
                let sb = corrective.beta(t)?.sqrt();
                let mixed = z.zip_map(&step, |a, b| (1.0 - alpha) * a + alpha * b)?;
                z = mixed.zip_map(&noise, |m, n| m + sb * n)?;
            }
            Ok(z)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_schedule, ToyDenoiser};
    use crate::latents::{sample_gaussian_latent, VaeScale};
    use crate::lexicon::lookup;
    use crate::spectral::{split_bands, TaperSpec};
    use proptest::prelude::*;

    fn shape() -> Shape {
        Shape::new(2, 24, 48).unwrap()
    }

    fn toy() -> ToyDenoiser {
        ToyDenoiser::new(shape(), VaeScale::SD15).unwrap()
    }

    fn cond(phrases: &[&str], g: f64) -> Conditioning {
        let ids: Vec<_> = phrases.iter().map(|p| lookup(p).unwrap()).collect();
        Conditioning::from_descriptors(&ids, cfg_weight(g)).unwrap()
    }

    fn norm(f: &LatentField) -> f64 {
        f.values().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn ddim_lands_on_target() {
        let d = toy();
        let c = cond(&["fox", "orange", "among trees"], 7.5);
        let target = d.guided_target(&c).unwrap();
        for steps in [5, 20, 50] {
            let s = make_schedule(steps, 1e-4, 0.02).unwrap();
            for seed in 0..3 {
                let z = base_sample(&d, &c, &s, SamplerKind::Ddim, shape(), seed).unwrap();
                assert!(z.max_abs_diff(&target) < 1e-6, "T={steps} seed={seed}");
            }
        }
    }

    #[test]
    fn guidance_weight_does_not_move_the_fixed_point() {
        let d = toy();
        let s = make_schedule(20, 1e-4, 0.02).unwrap();
        let c0 = cond(&["knight", "armored"], 1.0);
        let c4 = cond(&["knight", "armored"], 5.0);
        let z0 = base_sample(&d, &c0, &s, SamplerKind::Ddim, shape(), 9).unwrap();
        let z4 = base_sample(&d, &c4, &s, SamplerKind::Ddim, shape(), 9).unwrap();
        assert!(z0.max_abs_diff(&d.guided_target(&c0).unwrap()) < 1e-5);
        // Step-by-step reference for w = 4: explicit formulas, no library ops.
        let target = d.target(&c4).unwrap();
        let mut z = sample_gaussian_latent(2, 24, 48, 9).unwrap().into_values();
        for t in (1..=20).rev() {
            let a = s.alpha_bar(t).unwrap();
            let ap = s.alpha_bar(t - 1).unwrap();
            z = z
                .iter()
                .zip(target.values())
                .map(|(&zt, &x)| {
                    let ec = (zt - a.sqrt() * x) / (1.0 - a).sqrt();
                    let eu = zt / (1.0 - a).sqrt();
                    let e = 5.0 * ec - 4.0 * eu;
                    let x0 = (zt - (1.0 - a).sqrt() * e) / a.sqrt();
                    ap.sqrt() * x0 + (1.0 - ap).sqrt() * e
                })
                .collect();
        }
        let reference = LatentField::new(shape(), z).unwrap();
        assert!(z4.max_abs_diff(&reference) < 1e-9);
        assert!(z4.max_abs_diff(&z0) < 1e-6);
    }

    #[test]
    fn ddpm_is_reproducible() {
        let d = toy();
        let s = make_schedule(10, 1e-4, 0.02).unwrap();
        let c = cond(&["queen"], 3.0);
        let a = base_sample(&d, &c, &s, SamplerKind::Ddpm, shape(), 4).unwrap();
        let b = base_sample(&d, &c, &s, SamplerKind::Ddpm, shape(), 4).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn strength_examples() {
        let m = strength_to_start(30, 30).unwrap();
        assert_eq!((m.strength, m.t0), (0.95, 1));
        let m = strength_to_start(0, 30).unwrap();
        assert_eq!((m.strength, m.t0), (0.01, 29));
        let m = strength_to_start(45, 50).unwrap();
        assert_eq!((m.strength, m.t0), (0.9, 5));
        assert!(strength_to_start(31, 30).is_err());
        assert!(strength_to_start(0, 0).is_err());
    }

    #[test]
    fn lambda_rounding() {
        assert_eq!(lambda_to_k(0.30, 30), 9);
        assert_eq!(lambda_to_k(0.12, 16), 2);
        assert_eq!(lambda_to_k(0.25, 2), 1);
        assert_eq!(lambda_to_k(2.0, 10), 10);
    }

    fn params(lambda: f64, t_prime: u32) -> CadrParams {
        CadrParams {
            lambda,
            guidance: 4.0,
            t_prime,
            rho: 0.7,
        }
    }

    #[test]
    fn skip_returns_input_bit_exactly() {
        let d = toy();
        let s = make_schedule(50, 1e-4, 0.02).unwrap();
        let z = sample_gaussian_latent(2, 24, 48, 1).unwrap();
        let c = cond(&["fox"], 7.5);
        for p in [params(0.3, 0), params(0.0, 30)] {
            let out = img2img_refine(&d, &z, &c, &p, &s, 1, RefineMode::Img2Img).unwrap();
            assert_eq!(out.to_bytes(), z.to_bytes());
        }
    }

    #[test]
    fn refine_pulls_to_the_new_target() {
        let d = toy();
        let s = make_schedule(50, 1e-4, 0.02).unwrap();
        let z = sample_gaussian_latent(2, 24, 48, 1).unwrap();
        let c = cond(&["dog", "steampunk", "brass"], 7.5);
        let out = img2img_refine(&d, &z, &c, &params(0.30, 30), &s, 1, RefineMode::Img2Img).unwrap();
        assert!(out.max_abs_diff(&d.guided_target(&c).unwrap()) < 1e-4);
        let again = img2img_refine(&d, &z, &c, &params(0.30, 30), &s, 1, RefineMode::Img2Img).unwrap();
        assert_eq!(out.to_bytes(), again.to_bytes());
    }

    #[test]
    fn small_lambda_preserves_layout() {
        let s = make_schedule(50, 1e-4, 0.02).unwrap();
        let shape = Shape::new(2, 64, 64).unwrap();
        let d64 = ToyDenoiser::new(shape, VaeScale::SD15).unwrap();
        let base = cond(&["castle", "forest"], 7.5);
        let rich = cond(&["castle", "forest", "ancient", "misty"], 7.5);
        let z_base = base_sample(&d64, &base, &s, SamplerKind::Ddim, shape, 3).unwrap();
        let z_ref =
            img2img_refine(&d64, &z_base, &rich, &params(0.12, 16), &s, 3, RefineMode::Img2Img)
                .unwrap();
        let (lo_b, hi_b) = split_bands(&z_base, 0.25, TaperSpec::default()).unwrap();
        let (lo_r, hi_r) = split_bands(&z_ref, 0.25, TaperSpec::default()).unwrap();
        let lo = norm(&lo_r.zip_map(&lo_b, |a, b| a - b).unwrap());
        let hi = norm(&hi_r.zip_map(&hi_b, |a, b| a - b).unwrap());
        assert!(lo <= hi, "low {lo} high {hi}");
    }

    #[test]
    fn blend_mode_moves_toward_target() {
        let d = toy();
        let s = make_schedule(50, 1e-4, 0.02).unwrap();
        let c = cond(&["fairy", "glowing"], 5.0);
        let z = LatentField::zeros(shape());
        let out = img2img_refine(&d, &z, &c, &params(0.3, 20), &s, 2, RefineMode::Blend).unwrap();
        let again = img2img_refine(&d, &z, &c, &params(0.3, 20), &s, 2, RefineMode::Blend).unwrap();
        assert_eq!(out.to_bytes(), again.to_bytes());
        let gamma = VaeScale::SD15.gamma();
        for phrase in ["fairy", "glowing"] {
            let coef = d.bank().coefficient(&out, lookup(phrase).unwrap(), 0);
            assert!(coef > 0.5 * gamma, "{phrase}: {coef}");
        }
        let skipped = img2img_refine(&d, &z, &c, &params(0.3, 0), &s, 2, RefineMode::Blend).unwrap();
        assert_eq!(skipped, z);
    }

    proptest! {
        #[test]
        fn strength_nondecreasing_in_k(t_prime in 1usize..=60) {
            let mut prev = 0.0;
            for k in 0..=t_prime {
                let m = strength_to_start(k, t_prime).unwrap();
                prop_assert!(m.strength >= prev);
                prop_assert!(m.t0 < t_prime);
                prev = m.strength;
            }
        }
    }
}
