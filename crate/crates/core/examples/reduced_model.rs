//! Two-variable reduced model against the full model, plus constraint errors.
//!
//! cargo run --release --example reduced_model

use tumor_csp::csp;
use tumor_csp::harness::Scenario;
use tumor_csp::integrator::{integrate, stable_attractors, IntegratorConfig};
use tumor_csp::reduction::{self, LeadingOrderModel, CONSTRAINT_WINDOW};

fn main() -> tumor_csp::Result<()> {
    let model = LeadingOrderModel::new(&Default::default());
    println!("reduced-model parameters: {:?}", model.parameters());
    for name in ["TP", "TR"] {
        let s = Scenario::builtin(name)?;
        let cfg = IntegratorConfig::default().with_t_end(s.t_end);
        let full = integrate(&s.initial, &s.params, &cfg)?;
        let te = csp::explosive_stage(&full, &s.params)?.map(|st| st.end);
        let reduced = reduction::simulate_reduced(s.initial.tumor, s.initial.circulating, &s.params, &cfg)?;
        let te_val = te.unwrap_or(s.t_end);
        let window = (CONSTRAINT_WINDOW.0 * te_val, CONSTRAINT_WINDOW.1 * te_val);
        let cmp = reduction::compare_reduced(&full, &reduced, window, &stable_attractors(&s.params)?)?;
        let errors = reduction::constraint_errors(&full, &s.params, te);
        println!(
            "{name}: attractor full {:?} reduced {:?}; window max rel. error T {:.3e} C {:.1e}; constraint errors (N, L) window {:?} after {:?}",
            cmp.full_attractor, cmp.reduced_attractor, cmp.window_max[0], cmp.window_max[3], errors.window_max, errors.after_max
        );
    }
    Ok(())
}
