//! Component ablations: the full system against runs without the image
//! critic, the agent committee or spectral fusion.
//!
//! cargo run --example ablation

use std::error::Error;

use critifusion::latents::Shape;
use critifusion::pipeline::{ablate, sweep_ensemble, ComponentMask, PipelineConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let mut cfg = PipelineConfig::default().with_seed(5);
    cfg.shape = Shape::new(4, 24, 48)?;
    let prompts: Vec<String> = ["a queen", "a fairy in a forest", "a dog beside a lake"]
        .map(String::from)
        .to_vec();
    let mut variants = ComponentMask::singles().to_vec();
    variants.push(ComponentMask::parse("vlm,multi_llm")?);
    print!("{}", ablate(&cfg, &variants, &prompts, 4)?);
    println!();
    print!("{}", sweep_ensemble(&cfg, &[1, 2, 3, 4, 5, 6], &prompts, 4)?);
    Ok(())
}
