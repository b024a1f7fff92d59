//! Smallest initial tumor that escapes to the high-tumor state, with N, L, C fixed.
//!
//! cargo run --release --example basin_threshold

use tumor_csp::integrator::{basin_threshold, IntegratorConfig};
use tumor_csp::ParameterSet;

fn main() -> tumor_csp::Result<()> {
    let p = ParameterSet::default();
    let cfg = IntegratorConfig::default().with_t_end(200.0);
    let t = basin_threshold(1e3, 10.0, 6e8, &p, (10.0, 1e9), &cfg)?;
    println!("T(0) < {} -> {}, T(0) >= {} -> {} ({} runs)", t.threshold, t.below, t.threshold, t.above, t.runs);
    Ok(())
}
