//! Tumor-free and high-tumor equilibria with their spectra.
//!
//! cargo run --release --example equilibria

use tumor_csp::equilibria::{self, HteSearch};
use tumor_csp::ParameterSet;

fn main() -> tumor_csp::Result<()> {
    let p = ParameterSet::default();
    for eq in equilibria::all_equilibria(&p, &HteSearch::default())? {
        let [t, n, l, c] = eq.state.to_array();
        let spectrum: Vec<String> = eq.eigenvalues.iter().map(|z| format!("{:+.4e}", z.re)).collect();
        println!(
            "{} T={t:.5e} N={n:.5e} L={l:.5e} C={c:.4e} feasible={} stable={}  Re(lambda) [{}]",
            eq.kind,
            eq.feasible,
            eq.stable,
            spectrum.join(", ")
        );
    }
    println!("closed-form TFE stability: {}", equilibria::tfe_is_stable(&p));
    Ok(())
}
