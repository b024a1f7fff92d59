//! Table report for all scenarios, written as JSON to stdout.
//!
//! cargo run --release --example report_tables > report.json

use tumor_csp::harness::{combined_persistent_sets, report_tables, run_scenario, Scenario, ScenarioOptions};

fn main() -> tumor_csp::Result<()> {
    let options = ScenarioOptions { grid_diagnostics: false, ..ScenarioOptions::table_reproduction() };
    let reports = Scenario::builtins()
        .iter()
        .map(|s| run_scenario(s, &options).map(|b| report_tables(&b)))
        .collect::<tumor_csp::Result<Vec<_>>>()?;
    let doc = serde_json::json!({
        "scenarios": reports,
        "persistent_importance": combined_persistent_sets(&reports),
    });
    println!("{}", serde_json::to_string_pretty(&doc).expect("serializable report"));
    Ok(())
}
