//! The alignment-to-schedule map across the score range, including the skip
//! threshold and draft scores given on a 0..100 scale.
//!
//! cargo run --example cadr_schedule

use std::error::Error;

use critifusion::cadr::{cadr_from_alignment, cadr_from_percent, CadrConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let cfg = CadrConfig::default();
    println!("{:>5} {:>7} {:>8} {:>4} {:>6}", "s", "lambda", "guidance", "T'", "rho");
    for i in 0..=10 {
        let s = i as f64 / 10.0;
        let p = cadr_from_alignment(s, &cfg)?;
        if p.is_skip() {
            println!("{s:>5.2}  skip (s > {})", cfg.skip_threshold);
        } else {
            println!("{s:>5.2} {:>7.3} {:>8.2} {:>4} {:>6.3}", p.lambda, p.guidance, p.t_prime, p.rho);
        }
    }
    let draft = cadr_from_percent(62.0, &cfg)?;
    println!("draft score 62/100 -> T' {} rho {:.3}", draft.t_prime, draft.rho);
    Ok(())
}
