//! CSV and JSON writers. Floats are written with 17 significant digits.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::csp::{DiagnosticsRecord, TimescaleRow};
use crate::equilibria::{BifurcationScan, Equilibrium, EquilibriumRecord};
use crate::error::Result;
use crate::integrator::Trajectory;
use crate::kinetics::VARIABLES;
use crate::reduction::ConstraintErrors;

/// Shortest fixed layout that round-trips every `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_path(path)?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// `t, T, N, L, C`.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "T", "N", "L", "C"])?;
    for s in &traj.states {
        w.write_record([s.t, s.tumor, s.nk, s.cd8, s.circulating].map(fmt_f64))?;
    }
    w.flush()?;
    Ok(())
}

/// `t, T, C, N_hat, L_hat` of a reduced trajectory.
pub fn write_reduced_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "T", "C", "N_hat", "L_hat"])?;
    for s in &traj.states {
        w.write_record([s.t, s.tumor, s.circulating, s.nk, s.cd8].map(fmt_f64))?;
    }
    w.flush()?;
    Ok(())
}

/// `t, tau1..tau4, re_lambda1..re_lambda4, explosive_flag`.
pub fn write_timescales_csv(path: &Path, rows: &[TimescaleRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "t", "tau1", "tau2", "tau3", "tau4", "re_lambda1", "re_lambda2", "re_lambda3", "re_lambda4", "explosive_flag",
    ])?;
    for r in rows {
        let mut rec = vec![fmt_f64(r.t)];
        rec.extend(r.timescales.iter().map(|v| fmt_f64(*v)));
        rec.extend(r.re_lambda.iter().map(|v| fmt_f64(*v)));
        rec.push(u8::from(r.explosive).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Long format: `t, t_over_texp, mode_or_variable, index_type, target, value`.
pub fn write_diagnostics_csv(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "t_over_texp", "mode_or_variable", "index_type", "target", "value"])?;
    for r in records {
        let (t, ratio) = (fmt_f64(r.time), fmt_opt(r.t_over_texp));
        for (kind, table) in [("API", &r.api), ("TPI", &r.tpi)] {
            for (n, row) in table.iter().enumerate() {
                for (k, v) in row.iter().enumerate() {
                    w.write_record([t.clone(), ratio.clone(), (n + 1).to_string(), kind.into(), (k + 1).to_string(), fmt_f64(*v)])?;
                }
            }
        }
        for (m, row) in r.pointer.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                w.write_record([t.clone(), ratio.clone(), (m + 1).to_string(), "Po".into(), VARIABLES[i].into(), fmt_f64(*v)])?;
            }
        }
        for (n, row) in r.importance.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                w.write_record([t.clone(), ratio.clone(), VARIABLES[n].into(), "II".into(), (k + 1).to_string(), fmt_f64(*v)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `t, t_over_texp, RE_N, RE_L`.
pub fn write_constraint_errors_csv(path: &Path, errors: &ConstraintErrors) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "t_over_texp", "RE_N", "RE_L"])?;
    for p in &errors.points {
        w.write_record([fmt_f64(p.t), fmt_opt(p.t_over_texp), fmt_f64(p.re_n), fmt_f64(p.re_l)])?;
    }
    w.flush()?;
    Ok(())
}

/// `param_name, param_value, branch_id, T_star, stable, kind`.
pub fn write_bifurcation_csv(path: &Path, scan: &BifurcationScan) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["param_name", "param_value", "branch_id", "T_star", "stable", "kind"])?;
    for (id, p) in scan.rows() {
        w.write_record([
            scan.parameter.name().to_string(),
            fmt_f64(p.value),
            id.to_string(),
            fmt_f64(p.t_star),
            u8::from(p.stable).to_string(),
            p.kind.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_equilibria_json(path: &Path, equilibria: &[Equilibrium]) -> Result<()> {
    let records: Vec<EquilibriumRecord> = equilibria.iter().map(Equilibrium::record).collect();
    write_json(path, &records)
}
