//! Final and reference scores as the corrective depth k grows.
//!
//! cargo run --example k_sweep

use std::error::Error;

use critifusion::latents::Shape;
use critifusion::pipeline::{sweep_k, PipelineConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let mut cfg = PipelineConfig::default().with_seed(11);
    cfg.shape = Shape::new(4, 24, 48)?;
    let prompts: Vec<String> = ["a fox", "a rabbit in a forest", "a knight beside a castle"]
        .map(String::from)
        .to_vec();
    let table = sweep_k(&cfg, &[0, 5, 10, 20, 30], &prompts, 4)?;
    print!("{table}");
    Ok(())
}
