use crate::latents::LatentField;

use super::{DiffusionError, VarianceSchedule};

/// `√ᾱ_t x0 + √(1 - ᾱ_t) noise`; `t = 0` returns `x0`.
pub fn forward_noise(
    x0: &LatentField,
    t: usize,
    sched: &VarianceSchedule,
    noise: &LatentField,
) -> Result<LatentField, DiffusionError> {
    let a = sched.alpha_bar(t)?;
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(x0.zip_map(noise, |x, n| sa * x + sn * n)?)
}

/// Classifier-free guidance `(1 + w) ε_c - w ε_u`, evaluated as
/// `ε_c + w (ε_c - ε_u)` so that equal inputs pass through exactly.
pub fn cfg_combine(
    eps_cond: &LatentField,
    eps_uncond: &LatentField,
    w: f64,
) -> Result<LatentField, DiffusionError> {
    if !(w >= 0.0 && w.is_finite()) {
        return Err(DiffusionError::Guidance(w));
    }
    Ok(eps_cond.zip_map(eps_uncond, |c, u| c + w * (c - u))?)
}

/// `x̂0 = (z_t - √(1 - ᾱ_t) ε̂) / √ᾱ_t`.
pub fn predict_x0(
    z_t: &LatentField,
    t: usize,
    eps_hat: &LatentField,
    sched: &VarianceSchedule,
) -> Result<LatentField, DiffusionError> {
    let a = sched.alpha_bar(t)?;
    if a <= 0.0 {
        return Err(DiffusionError::SingularStep { t });
    }
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(z_t.zip_map(eps_hat, |z, e| (z - sn * e) / sa)?)
}

/// Deterministic (η = 0) DDIM update from `t` to `t - 1`.
pub fn ddim_step(
    z_t: &LatentField,
    t: usize,
    eps_hat: &LatentField,
    sched: &VarianceSchedule,
) -> Result<LatentField, DiffusionError> {
    sched.check_step(t)?;
    let x0 = predict_x0(z_t, t, eps_hat, sched)?;
    let a_prev = sched.alpha_bar(t - 1)?;
    let (sa, sn) = (a_prev.sqrt(), (1.0 - a_prev).sqrt());
    Ok(x0.zip_map(eps_hat, |x, e| sa * x + sn * e)?)
}

/// Ancestral update `(z_t - β_t ε̂) / √(1 - β_t) + σ_t noise`.
pub fn ddpm_step(
    z_t: &LatentField,
    t: usize,
    eps_hat: &LatentField,
    sched: &VarianceSchedule,
    noise: &LatentField,
) -> Result<LatentField, DiffusionError> {
    let beta = sched.beta(t)?;
    let sigma = sched.posterior_std(t)?;
    let scale = (1.0 - beta).sqrt();
    let mean = z_t.zip_map(eps_hat, |z, e| (z - beta * e) / scale)?;
    Ok(mean.zip_map(noise, |m, n| m + sigma * n)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latents::{sample_gaussian_latent, Shape};
    use proptest::prelude::*;

    fn constant(v: f64) -> LatentField {
        LatentField::filled(Shape::new(1, 2, 2).unwrap(), v).unwrap()
    }

    fn assert_constant(f: &LatentField, v: f64, tol: f64) {
        for &x in f.values() {
            assert!((x - v).abs() < tol, "{x} vs {v}");
        }
    }

    /// Two-step schedule with ᾱ_1 = 0.81 and ᾱ_2 = 0.64.
    fn hand_schedule() -> VarianceSchedule {
        VarianceSchedule::from_alpha_bars(&[0.81, 0.64]).unwrap()
    }

    #[test]
    fn forward_noise_cases() {
        let s = VarianceSchedule::from_betas(vec![0.1, 0.2]).unwrap();
        let x0 = sample_gaussian_latent(1, 4, 4, 3).unwrap();
        let zero = LatentField::zeros(x0.shape());
        let out = forward_noise(&x0, 1, &s, &zero).unwrap();
        for (o, x) in out.values().iter().zip(x0.values()) {
            assert_eq!(*o, 0.9f64.sqrt() * x);
        }
        assert_eq!(forward_noise(&x0, 0, &s, &x0).unwrap(), x0);
        let n = sample_gaussian_latent(1, 4, 4, 4).unwrap();
        let out = forward_noise(&zero, 2, &s, &n).unwrap();
        for (o, v) in out.values().iter().zip(n.values()) {
            assert!((o - 0.28f64.sqrt() * v).abs() < 1e-12);
        }
        assert!(forward_noise(&x0, 3, &s, &n).is_err());
    }

    #[test]
    fn cfg_cases() {
        let a = constant(2.0);
        let b = constant(1.0);
        assert_eq!(cfg_combine(&a, &b, 0.0).unwrap(), a);
        assert_eq!(cfg_combine(&a, &a, 9.0).unwrap(), a);
        assert_constant(&cfg_combine(&a, &b, 3.0).unwrap(), 5.0, 1e-12);
        assert!(matches!(cfg_combine(&a, &b, -1.0), Err(DiffusionError::Guidance(_))));
    }

    #[test]
    fn x0_hand_value() {
        let s = hand_schedule();
        let x0 = predict_x0(&constant(1.0), 2, &constant(0.5), &s).unwrap();
        assert_constant(&x0, 0.875, 1e-12);
        let plain = predict_x0(&constant(1.0), 2, &constant(0.0), &s).unwrap();
        assert_constant(&plain, 1.0 / 0.8, 1e-12);
    }

    #[test]
    fn ddim_hand_value() {
        let s = hand_schedule();
        let out = ddim_step(&constant(1.0), 2, &constant(0.5), &s).unwrap();
        assert_constant(&out, 0.9 * 0.875 + 0.19f64.sqrt() * 0.5, 1e-9);
        assert_constant(&out, 1.005_444_947_177, 1e-9);
        let last = ddim_step(&constant(1.0), 1, &constant(0.5), &s).unwrap();
        let x0 = predict_x0(&constant(1.0), 1, &constant(0.5), &s).unwrap();
        assert_eq!(last, x0);
        assert!(ddim_step(&constant(1.0), 0, &constant(0.5), &s).is_err());
    }

    #[test]
    fn ddpm_hand_value() {
        let s = VarianceSchedule::from_betas(vec![0.1]).unwrap();
        let noise = constant(1.0);
        // σ_1 = 0, so the noise field has no effect.
        let out = ddpm_step(&constant(1.0), 1, &constant(1.0), &s, &noise).unwrap();
        assert_constant(&out, 0.948_683_298_050_513_8, 1e-9);
        let again = ddpm_step(&constant(1.0), 1, &constant(1.0), &s, &noise).unwrap();
        assert_eq!(out, again);
    }

    proptest! {
        #[test]
        fn x0_inverts_forward_noise(seed in any::<u64>(), t in 1usize..=50) {
            let s = make_default();
            let x0 = sample_gaussian_latent(2, 4, 4, seed).unwrap();
            let n = sample_gaussian_latent(2, 4, 4, seed.wrapping_add(1)).unwrap();
            let zt = forward_noise(&x0, t, &s, &n).unwrap();
            let back = predict_x0(&zt, t, &n, &s).unwrap();
            prop_assert!(back.max_abs_diff(&x0) < 1e-9);
        }

        #[test]
        fn cfg_degenerates(seed in any::<u64>(), w in 0.0f64..20.0) {
            let a = sample_gaussian_latent(1, 3, 3, seed).unwrap();
            prop_assert_eq!(cfg_combine(&a, &a, w).unwrap(), a);
        }
    }

    fn make_default() -> VarianceSchedule {
        super::super::make_schedule(50, 1e-4, 0.02).unwrap()
    }
}
