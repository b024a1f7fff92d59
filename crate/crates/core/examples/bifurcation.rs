//! Equilibrium branches as the kill rate d is swept.
//!
//! cargo run --release --example bifurcation

use tumor_csp::equilibria::{self, EquilibriumKind, HteSearch, Spacing};
use tumor_csp::{Param, ParameterSet};

fn main() -> tumor_csp::Result<()> {
    let p = ParameterSet::default();
    let values = equilibria::sweep_values(0.01, 2000.0, 240, Spacing::Log)?;
    let scan = equilibria::bifurcation_scan(&p, Param::D, &values, &HteSearch::default())?;
    println!("transcritical point d = {:?}", scan.transcritical);
    println!("saddle-node point   d = {:?}", scan.saddle_node);
    for (branch, point) in scan.rows().into_iter().step_by(12) {
        if point.kind == EquilibriumKind::Hte {
            println!("branch {branch}  d = {:>10.4}  T* = {:.4e}  stable = {}", point.value, point.t_star, point.stable);
        }
    }
    Ok(())
}
