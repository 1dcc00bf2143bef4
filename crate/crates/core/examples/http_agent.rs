//! Runs the pipeline with a chat-completion endpoint as the agent backend.
//! The token is read from CRITIFUSION_API_KEY; unreachable or failing calls
//! fall back to the mock agents.
//!
//! cargo run --example http_agent -- http://localhost:8080/v1 my-model
//!
//! Without a URL the mock agents are used.

use std::error::Error;

use critifusion::agents::{AgentEndpoint, API_KEY_ENV};
use critifusion::latents::Shape;
use critifusion::pipeline::{run_critifusion, AgentBackendKind, Backends, PipelineConfig, RunOptions};

fn main() -> Result<(), Box<dyn Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg = PipelineConfig::default().with_prompt("a rabbit in a forest").with_seed(9);
    cfg.shape = Shape::new(4, 24, 48)?;
    if let Some(url) = args.next() {
        let model = args.next().unwrap_or_else(|| "default".into());
        cfg.agent_backend = AgentBackendKind::Http;
        cfg.endpoint = AgentEndpoint::new(url, model);
        cfg.degrade = true;
        let has_token = std::env::var(API_KEY_ENV).is_ok_and(|t| !t.is_empty());
        println!("endpoint {}, token {}", cfg.endpoint.base_url, if has_token { "set" } else { "unset" });
    } else {
        println!("no URL given: using the mock agents");
    }
    cfg.validate()?;

    let out = run_critifusion(&cfg, &Backends::from_config(&cfg)?, &RunOptions::default())?;
    if let Some(stage) = out.record.stage("decompose_clauses") {
        println!("committee stage: {}", stage.data);
    }
    match out.summary() {
        Some(s) => println!("base {:.4} -> final {:.4}: {}", s.base_score, s.final_score, s.enhanced_prompt.join(" ")),
        None => println!("run failed: {:?}", out.error),
    }
    Ok(())
}
