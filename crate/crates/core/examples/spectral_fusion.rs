//! Low/high band split and spectral fusion of two latents at several cutoffs.
//!
//! cargo run --example spectral_fusion

use std::error::Error;

use critifusion::latents::sample_gaussian_latent;
use critifusion::spectral::{
    build_lowpass_mask, forward_spectrum, spec_fuse, split_bands, Clamp, TaperSpec,
};

fn main() -> Result<(), Box<dyn Error>> {
    let z_ref = sample_gaussian_latent(4, 64, 64, 1)?;
    let z_base = sample_gaussian_latent(4, 64, 64, 2)?;
    let total = forward_spectrum(&z_base).energy();

    println!("{:>5} {:>10} {:>12} {:>12} {:>12}", "rho", "mask sum", "low energy", "|f-ref|", "|f-base|");
    for rho in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let mask = build_lowpass_mask(64, 64, rho, TaperSpec::default())?;
        let (low, _) = split_bands(&z_base, rho, TaperSpec::default())?;
        let fused = spec_fuse(&z_ref, &z_base, rho, TaperSpec::default(), Clamp::Off)?;
        println!(
            "{rho:>5.2} {:>10.1} {:>11.1}% {:>12.4} {:>12.4}",
            mask.weights().iter().sum::<f64>(),
            100.0 * forward_spectrum(&low).energy() / total,
            fused.max_abs_diff(&z_ref),
            fused.max_abs_diff(&z_base),
        );
    }

    let hard = spec_fuse(&z_ref, &z_base, 0.6, TaperSpec::none(), Clamp::Off)?;
    let soft = spec_fuse(&z_ref, &z_base, 0.6, TaperSpec::default(), Clamp::On)?;
    println!("hard vs tapered+clamped mask at rho 0.6 differ by {:.4}", hard.max_abs_diff(&soft));
    Ok(())
}
