//! Seeded Gaussian latents, per-channel statistics and the CRTFLAT round trip.
//!
//! cargo run --example gaussian_latents -- [seed]

use std::error::Error;

use critifusion::latents::{
    apply_vae_scale, latent_stats, read_latent, sample_gaussian_latent, write_latent,
    ScaleDirection, VaeScale,
};

fn main() -> Result<(), Box<dyn Error>> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(42), |s| s.parse())?;
    let z = sample_gaussian_latent(4, 64, 64, seed)?;
    println!("seed {seed}: shape {:?}, digest {}", z.shape(), &z.digest()[..16]);
    for (c, s) in latent_stats(&z).channels.iter().enumerate() {
        println!(
            "  channel {c}: mean {:+.4} var {:.4} range [{:.3}, {:.3}]",
            s.mean, s.variance, s.min, s.max
        );
    }

    let again = sample_gaussian_latent(4, 64, 64, seed)?;
    println!("same seed reproduces bit-for-bit: {}", again.values() == z.values());

    let mut bytes = Vec::new();
    write_latent(&z, &mut bytes)?;
    let back = read_latent(&mut bytes.as_slice())?;
    println!(
        "CRTFLAT: {} bytes, round-trip error {:.2e} (f32 storage)",
        bytes.len(),
        back.max_abs_diff(&z)
    );

    let image = apply_vae_scale(&z, VaeScale::SD15, ScaleDirection::Decode);
    let var = latent_stats(&image).channels[0].variance;
    println!("decoded with gamma {}: channel 0 variance {var:.2}", VaeScale::SD15.gamma());
    Ok(())
}
