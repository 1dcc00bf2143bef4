//! One full run on the toy backends: stages, scores, the chosen schedule
//! and the enhanced prompt.
//!
//! cargo run --example critifusion_pipeline -- "a fox in the snow" 7

use std::error::Error;

use critifusion::latents::Shape;
use critifusion::pipeline::{run_critifusion, Backends, PipelineConfig, RunOptions};

fn main() -> Result<(), Box<dyn Error>> {
    let mut args = std::env::args().skip(1);
    let prompt = args.next().unwrap_or_else(|| "a fox in the snow".into());
    let seed: u64 = args.next().map_or(Ok(7), |s| s.parse())?;

    let mut cfg = PipelineConfig::default().with_prompt(&prompt).with_seed(seed);
    cfg.shape = Shape::new(4, 24, 48)?;
    cfg.validate()?;
    let out = run_critifusion(&cfg, &Backends::from_config(&cfg)?, &RunOptions::default())?;

    for s in &out.record.stages {
        println!("{:>2} {:<18}{}", s.index, s.stage, if s.skipped { " (skipped)" } else { "" });
    }
    if let Some(err) = &out.error {
        println!("run failed: {err}");
        return Ok(());
    }
    let s = out.summary().expect("successful run has a summary");
    println!("base score {:.4}, final score {:.4}", s.base_score, s.final_score);
    match &s.plan {
        Some(p) => println!("T' {} k {} guidance {:.2} rho {:.3}", p.t_prime, p.k, p.guidance, s.cadr.rho),
        None => println!("aligned enough: refinement skipped"),
    }
    println!("hints: {:?}", s.hints);
    println!("enhanced prompt: {}", s.enhanced_prompt.join(" "));
    Ok(())
}
