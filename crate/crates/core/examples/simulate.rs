//! Integrates the four built-in scenarios and prints where each one ends up.
//!
//! cargo run --release --example simulate

use tumor_csp::csp;
use tumor_csp::harness::{classify_trajectory, Scenario};
use tumor_csp::integrator::{integrate, stable_attractors, IntegratorConfig};

fn main() -> tumor_csp::Result<()> {
    for s in Scenario::builtins() {
        let traj = integrate(&s.initial, &s.params, &IntegratorConfig::default().with_t_end(s.t_end))?;
        let stage = csp::explosive_stage(&traj, &s.params)?;
        let (attractor, distance) = classify_trajectory(&traj, &stable_attractors(&s.params)?)?;
        let y = traj.final_state();
        println!(
            "{:<4} T(0) = {:.4e}  t_exp = {:>8.4}  T({}) = {:.4e}  -> {} (rel. distance {distance:.1e}, {} steps)",
            s.name,
            s.initial.tumor,
            stage.map_or(f64::NAN, |st| st.end),
            s.t_end,
            y.tumor,
            attractor.map_or("none".to_string(), |k| k.to_string()),
            traj.stats.steps,
        );
    }
    Ok(())
}
