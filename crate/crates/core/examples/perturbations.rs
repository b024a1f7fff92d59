//! Response of the TP scenario to scaling single constants.
//!
//! cargo run --release --example perturbations

use tumor_csp::harness::{run_perturbation, standard_perturbations, PerturbationSpec, Scenario};
use tumor_csp::integrator::IntegratorConfig;

fn main() -> tumor_csp::Result<()> {
    let baseline = Scenario::builtin("TP")?;
    for (parameter, multiplier) in standard_perturbations() {
        let spec = PerturbationSpec { parameter, multiplier, baseline: baseline.clone() };
        let r = run_perturbation(&spec, &IntegratorConfig::default())?;
        println!(
            "{} x{multiplier}: t_exp {:.4} -> {:.4} ({:?}); final T ratio {:.4}; window N ratio {:.4}; max T change {:.2e}",
            parameter.name(),
            r.baseline_t_exp,
            r.perturbed_t_exp,
            r.verdicts.t_exp,
            r.final_window_ratio[0],
            r.constraint_window_ratio[1],
            r.max_relative_change[0],
        );
    }
    Ok(())
}
