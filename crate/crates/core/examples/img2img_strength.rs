//! Strength clipping for partial re-denoising, and what a corrective pass of
//! growing depth does to a base latent.
//!
//! cargo run --example img2img_strength

use std::error::Error;

use critifusion::diffusion::{
    base_sample, make_schedule, refine_with_plan, strength_to_start, Conditioning, RefineMode,
    RefinePlan, SamplerKind, ToyDenoiser,
};
use critifusion::latents::{Shape, VaeScale};

fn main() -> Result<(), Box<dyn Error>> {
    let t_prime = 20;
    println!("T' = {t_prime}");
    for k in [0, 1, 5, 10, 19, 20] {
        let m = strength_to_start(k, t_prime)?;
        println!("  k={k:>2}: strength {:.2}, t0 {:>2}, start level {}", m.strength, m.t0, m.start_level());
    }

    let shape = Shape::new(4, 24, 48)?;
    let toy = ToyDenoiser::new(shape, VaeScale::SD15)?;
    let sched = make_schedule(50, 1e-4, 0.02)?;
    let base = base_sample(&toy, &Conditioning::from_prompt("a fox", 7.5)?, &sched, SamplerKind::Ddim, shape, 3)?;
    let richer = Conditioning::from_prompt("a fox orange fur", 7.5)?;
    let goal = toy.guided_target(&richer.with_guidance(5.0)?)?;
    println!("refining 'a fox' towards 'a fox orange fur':");
    for k in [0, 4, 8, 12, 16] {
        let plan = RefinePlan { t_prime, k, guidance: 5.0, lambda: 0.3 };
        let z = refine_with_plan(&toy, &base, &richer, &plan, &sched, 3, RefineMode::Img2Img)?;
        println!(
            "  k={k:>2}: moved {:.4} from base, {:.4} from the new target",
            z.max_abs_diff(&base),
            z.max_abs_diff(&goal)
        );
    }
    Ok(())
}
