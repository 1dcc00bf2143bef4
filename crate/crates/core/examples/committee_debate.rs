//! Mixture-of-agents and multi-agent debate over the mock agents, with the
//! transcript and the resulting clauses.
//!
//! cargo run --example committee_debate -- "a queen in a castle"

use std::error::Error;

use critifusion::agents::MockBackend;
use critifusion::criticore::{instruction, run_committee, split_clauses, CommitteeConfig, PromptBundle};

fn main() -> Result<(), Box<dyn Error>> {
    let prompt = std::env::args().nth(1).unwrap_or_else(|| "a queen in a castle".into());
    let bundle = PromptBundle::from_text(&prompt, 77);
    let x = instruction(&bundle, &["crown missing".to_owned()]);

    for (label, committee) in [
        ("MoA widths [3, 2]", CommitteeConfig::moa(vec![3, 2])),
        ("MAD 3 agents x 2 rounds", CommitteeConfig::mad(3, 2)),
    ] {
        let out = run_committee(&x, &committee, &MockBackend)?;
        println!("{label}: {} calls", committee.call_count());
        for e in &out.transcript {
            println!("  [{} step {} agent {}] {}", e.stage, e.step, e.agent, e.text);
        }
        let clauses: Vec<String> = split_clauses(&out.text).iter().map(|c| c.join(" ")).collect();
        println!("  clauses: {}", clauses.join(" | "));
    }
    Ok(())
}
