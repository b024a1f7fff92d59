//! Mode tables (API, TPI, pointers) and the importance summary along one scenario.
//!
//! cargo run --release --example csp_diagnostics -- TR

use tumor_csp::harness::{report_tables, run_scenario, Scenario, ScenarioOptions};

fn main() -> tumor_csp::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "TP".into());
    let options = ScenarioOptions { grid_diagnostics: false, ..ScenarioOptions::table_reproduction() };
    let bundle = run_scenario(&Scenario::builtin(&name)?, &options)?;
    let report = report_tables(&bundle);
    println!("{name}: t_exp = {:?}", report.t_exp);
    for cp in &report.checkpoints {
        println!("t/t_exp = {} (t = {:.4}), M = {}", cp.t_over_texp, cp.time, cp.exhausted);
        for m in &cp.modes {
            let fmt = |list: &[tumor_csp::harness::TableEntry]| {
                list.iter().map(|e| format!("{}:{:+.3}", e.target, e.value)).collect::<Vec<_>>().join(" ")
            };
            let tag = if m.explosive { " (explosive)" } else { "" };
            println!("  mode {}{tag}: API [{}] TPI [{}] Po [{}]", m.mode, fmt(&m.api), fmt(&m.tpi), fmt(&m.pointer));
        }
    }
    for v in &report.importance {
        println!("{}: persistent processes {:?}", v.variable, v.persistent());
    }
    Ok(())
}
