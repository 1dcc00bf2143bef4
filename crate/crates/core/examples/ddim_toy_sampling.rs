//! Base sampling with the toy denoiser: DDIM converges onto the guided
//! target, DDPM lands near it.
//!
//! cargo run --example ddim_toy_sampling -- "a knight holding a sword"

use std::error::Error;

use critifusion::diffusion::{base_sample, make_schedule, Conditioning, SamplerKind, ToyDenoiser};
use critifusion::latents::{Shape, VaeScale};

fn main() -> Result<(), Box<dyn Error>> {
    let prompt = std::env::args().nth(1).unwrap_or_else(|| "a knight holding a sword".into());
    let shape = Shape::new(4, 24, 48)?;
    let toy = ToyDenoiser::new(shape, VaeScale::SD15)?;
    let cond = Conditioning::from_prompt(&prompt, 7.5)?;
    let target = toy.guided_target(&cond)?;
    println!("prompt {prompt:?}");

    for steps in [5, 20, 50] {
        let sched = make_schedule(steps, 1e-4, 0.02)?;
        for kind in [SamplerKind::Ddim, SamplerKind::Ddpm] {
            let z = base_sample(&toy, &cond, &sched, kind, shape, 7)?;
            println!(
                "  T={steps:>2} {kind:?}: max |z - target| = {:.3e}",
                z.max_abs_diff(&target)
            );
        }
    }
    Ok(())
}
