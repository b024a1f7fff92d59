//! Named scenarios, end-to-end scenario runs, parameter perturbations and
//! the tabulated diagnostic report.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csp::{self, DiagnosticOptions, DiagnosticsRecord, ExplosiveStage};
use crate::equilibria::{self, Equilibrium, EquilibriumKind, HteSearch};
use crate::error::{Error, Result};
use crate::integrator::{self, classify_state, evaluate_dense, relative_distance, Attractor, IntegratorConfig, OutputGrid, Trajectory};
use crate::kinetics::{Param, ParameterSet, State, PROCESS_COUNT, VARIABLES};
use crate::reduction::{self, ConstraintErrors};

/// Checkpoints, as fractions of `t_exp`, at which full tables are produced.
pub const DEFAULT_CHECKPOINTS: [f64; 4] = [0.0, 0.2, 0.5, 0.8];

/// Cumulative share of `|value|` at which a table listing stops.
pub const TABLE_COVERAGE: f64 = 0.95;

/// `|II|` above which a process counts as significant.
pub const IMPORTANCE_THRESHOLD: f64 = 0.02;

/// Window on `t / t_exp` over which importance is summarized.
pub const IMPORTANCE_WINDOW: (f64, f64) = (0.1, 0.95);

/// Fraction of window samples a process must be significant in to be persistent.
pub const PERSISTENCE_FRACTION: f64 = 0.5;

const IMPORTANCE_SAMPLES: usize = 85;

/// Relative change below which a perturbation effect is negligible.
pub const NEGLIGIBLE_CHANGE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub initial: State,
    pub params: ParameterSet,
    pub t_end: f64,
    pub expect: Option<EquilibriumKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
enum ExpectField {
    #[serde(rename = "TFE")]
    Tfe,
    #[serde(rename = "HTE")]
    Hte,
    #[serde(rename = "unspecified")]
    Unspecified,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    #[serde(rename = "T0")]
    tumor0: f64,
    #[serde(rename = "N0")]
    nk0: f64,
    #[serde(rename = "L0")]
    cd8_0: f64,
    #[serde(rename = "C0")]
    circulating0: f64,
    t_end: Option<f64>,
    params_file: Option<PathBuf>,
    expect: Option<ExpectField>,
}

impl Scenario {
    pub const BUILTIN_NAMES: [&'static str; 4] = ["TP", "TR", "TP1", "TR1"];

    pub fn new(name: &str, initial: [f64; 4], expect: Option<EquilibriumKind>) -> Self {
        Scenario {
            name: name.to_string(),
            initial: State::at(0.0, initial),
            params: ParameterSet::default(),
            t_end: 200.0,
            expect,
        }
    }

    /// Tumor persistence/remission cases with patient-9 constants.
    pub fn builtin(name: &str) -> Result<Scenario> {
        use EquilibriumKind::{Hte, Tfe};
        let (y, expect) = match name {
            "TP" => ([1e6, 1e3, 1e1, 6e8], Hte),
            "TR" => ([1e7, 2e5, 1e2, 4e10], Tfe),
            "TP1" => ([319393.0, 1e3, 1e1, 6e8], Hte),
            "TR1" => ([319392.0, 1e3, 1e1, 6e8], Tfe),
            _ => return Err(Error::UnknownScenario(name.to_string())),
        };
        Ok(Scenario::new(name, y, Some(expect)))
    }

    pub fn builtins() -> Vec<Scenario> {
        Self::BUILTIN_NAMES.iter().map(|n| Self::builtin(n).expect("builtin name")).collect()
    }

    /// Parses `{name, T0, N0, L0, C0, t_end?, params_file?, expect?}`;
    /// a relative `params_file` is resolved against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Scenario> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        let params = match &file.params_file {
            Some(p) => ParameterSet::from_file(&base_dir.join(p))?,
            None => ParameterSet::default(),
        };
        let expect = match file.expect {
            Some(ExpectField::Tfe) => Some(EquilibriumKind::Tfe),
            Some(ExpectField::Hte) => Some(EquilibriumKind::Hte),
            Some(ExpectField::Unspecified) | None => None,
        };
        let scenario = Scenario {
            name: file.name,
            initial: State::new(file.tumor0, file.nk0, file.cd8_0, file.circulating0),
            params,
            t_end: file.t_end.unwrap_or(200.0),
            expect,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_file(path: &Path) -> Result<Scenario> {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json(&std::fs::read_to_string(path)?, base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("scenario name `{}` must be a plain non-empty word", self.name)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("t_end = {} must be positive", self.t_end)));
        }
        self.initial.check_feasible()?;
        self.params.validate()
    }

    pub fn with_params(mut self, params: ParameterSet) -> Self {
        self.params = params;
        self
    }

    pub fn with_t_end(mut self, t_end: f64) -> Self {
        self.t_end = t_end;
        self
    }
}

/// Settings of [`run_scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOptions {
    pub integrator: IntegratorConfig,
    pub diagnostics: DiagnosticOptions,
    pub checkpoints: Vec<f64>,
    /// Also evaluate every diagnostic table at every grid point.
    pub grid_diagnostics: bool,
    pub hte_search: HteSearch,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            integrator: IntegratorConfig::default(),
            diagnostics: DiagnosticOptions::default(),
            checkpoints: DEFAULT_CHECKPOINTS.to_vec(),
            grid_diagnostics: true,
            hte_search: HteSearch::default(),
        }
    }
}

impl ScenarioOptions {
    /// Two exhausted modes at every checkpoint, the convention of the report tables.
    pub fn table_reproduction() -> Self {
        Self { diagnostics: DiagnosticOptions { fixed_m: Some(2), ..DiagnosticOptions::default() }, ..Self::default() }
    }
}

/// Everything produced by one scenario run.
#[derive(Debug, Clone)]
pub struct ScenarioBundle {
    pub scenario: Scenario,
    pub trajectory: Trajectory,
    pub explosive_stage: Option<ExplosiveStage>,
    /// Records at the requested `t / t_exp` checkpoints.
    pub checkpoints: Vec<DiagnosticsRecord>,
    /// Records at every grid point where the tables are defined.
    pub grid: Vec<DiagnosticsRecord>,
    /// Grid points where the decomposition was undefined (for example `T = 0`).
    pub grid_skipped: usize,
    /// Records uniformly spaced over the importance window.
    pub window: Vec<DiagnosticsRecord>,
    pub constraint_errors: ConstraintErrors,
    pub equilibria: Vec<Equilibrium>,
    pub attractor: Option<EquilibriumKind>,
    pub attractor_distance: f64,
}

impl ScenarioBundle {
    pub fn t_exp(&self) -> Option<f64> {
        self.explosive_stage.map(|s| s.end)
    }
}

fn record_at(traj: &Trajectory, t: f64, t_exp: Option<f64>, options: &DiagnosticOptions) -> Result<DiagnosticsRecord> {
    let state = evaluate_dense(traj, t)?;
    let decomp = csp::decompose(&state, &traj.params)?;
    csp::diagnose(&decomp, &traj.params, options, t_exp)
}

fn grid_records(traj: &Trajectory, t_exp: Option<f64>, options: &DiagnosticOptions) -> (Vec<DiagnosticsRecord>, usize) {
    let decomps: Vec<Option<csp::ModeDecomposition>> = traj
        .states
        .par_iter()
        .map(|s| csp::decompose(s, &traj.params).ok())
        .collect();
    let mut tracked: Vec<csp::ModeDecomposition> = Vec::with_capacity(decomps.len());
    for d in decomps.into_iter().flatten() {
        let next = match tracked.last() {
            Some(prev) => csp::track_modes(prev, &d),
            None => d,
        };
        tracked.push(next);
    }
    let records: Vec<Option<DiagnosticsRecord>> = tracked
        .par_iter()
        .map(|d| csp::diagnose(d, &traj.params, options, t_exp).ok())
        .collect();
    let kept: Vec<DiagnosticsRecord> = records.into_iter().flatten().collect();
    let skipped = traj.states.len() - kept.len();
    (kept, skipped)
}

/// Attractor reached by a trajectory, integrating a further twice its
/// duration if the end state is not yet within tolerance.
pub fn classify_trajectory(traj: &Trajectory, attractors: &[Attractor]) -> Result<(Option<EquilibriumKind>, f64)> {
    let last = traj.final_state();
    let distance = |y: &[f64; 4]| {
        attractors
            .iter()
            .map(|a| relative_distance(y, &a.state))
            .fold(f64::INFINITY, f64::min)
    };
    if let Some(i) = classify_state(&last.to_array(), attractors) {
        return Ok((Some(attractors[i].kind), distance(&last.to_array())));
    }
    let cfg = traj.config.clone().with_grid(OutputGrid::EndOnly).with_t_end(traj.end() + 2.0 * (traj.end() - traj.start()));
    let extended = integrator::continue_from(&last, &traj.params, &cfg)?.final_state().to_array();
    Ok((classify_state(&extended, attractors).map(|i| attractors[i].kind), distance(&extended)))
}

/// Integrates a scenario, finds its explosive stage, evaluates diagnostics
/// and constraint errors, and classifies the attractor reached.
pub fn run_scenario(scenario: &Scenario, options: &ScenarioOptions) -> Result<ScenarioBundle> {
    scenario.validate()?;
    let config = options.integrator.clone().with_t_end(scenario.t_end);
    let params = &scenario.params;
    let trajectory = integrator::integrate(&scenario.initial, params, &config)?;
    let stage = csp::explosive_stage(&trajectory, params)?;
    let t_exp = stage.map(|s| s.end);

    let checkpoints = match t_exp {
        Some(te) => options
            .checkpoints
            .iter()
            .map(|c| record_at(&trajectory, c * te, t_exp, &options.diagnostics))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let window = match t_exp {
        Some(te) => (0..IMPORTANCE_SAMPLES)
            .into_par_iter()
            .map(|i| {
                let (lo, hi) = IMPORTANCE_WINDOW;
                let frac = lo + (hi - lo) * (i as f64 + 0.5) / IMPORTANCE_SAMPLES as f64;
                record_at(&trajectory, frac * te, t_exp, &options.diagnostics)
            })
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let (grid, grid_skipped) = if options.grid_diagnostics {
        grid_records(&trajectory, t_exp, &options.diagnostics)
    } else {
        (Vec::new(), 0)
    };
    let constraint_errors = reduction::constraint_errors(&trajectory, params, t_exp);
    let equilibria = equilibria::all_equilibria(params, &options.hte_search)?;
    let attractors = integrator::stable_attractors(params)?;
    let (attractor, attractor_distance) = classify_trajectory(&trajectory, &attractors)?;

    Ok(ScenarioBundle {
        scenario: scenario.clone(),
        trajectory,
        explosive_stage: stage,
        checkpoints,
        grid,
        grid_skipped,
        window,
        constraint_errors,
        equilibria,
        attractor,
        attractor_distance,
    })
}

/// One constant scaled by `multiplier` relative to a baseline scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub parameter: Param,
    pub multiplier: f64,
    pub baseline: Scenario,
}

/// The perturbations discussed for the tumor-persistence case.
pub fn standard_perturbations() -> Vec<(Param, f64)> {
    vec![(Param::A, 0.8), (Param::A, 1.2), (Param::C, 0.6), (Param::E, 0.6)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increase,
    Decrease,
    Negligible,
}

impl Direction {
    /// Classifies a perturbed/baseline ratio against [`NEGLIGIBLE_CHANGE`].
    pub fn from_ratio(ratio: f64) -> Self {
        if (ratio - 1.0).abs() < NEGLIGIBLE_CHANGE {
            Direction::Negligible
        } else if ratio > 1.0 {
            Direction::Increase
        } else {
            Direction::Decrease
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationVerdicts {
    pub t_exp: Direction,
    pub final_tumor: Direction,
    pub final_nk: Direction,
    pub window_nk: Direction,
    /// `t_exp` and the whole tumor trajectory both within the negligible band.
    pub negligible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub parameter: Param,
    pub multiplier: f64,
    pub baseline_scenario: String,
    pub baseline_t_exp: f64,
    pub perturbed_t_exp: f64,
    pub delta_t_exp: f64,
    pub relative_delta_t_exp: f64,
    /// Largest `|x_pert - x_base| / |x_base|` over the baseline grid, per variable.
    pub max_relative_change: [f64; 4],
    /// Mean `x_pert / x_base` over `[0.8, 1.0] t_exp` of the baseline.
    pub final_window_ratio: [f64; 4],
    /// Mean `x_pert / x_base` over `[0.2, 0.95] t_exp` of the baseline.
    pub constraint_window_ratio: [f64; 4],
    pub verdicts: PerturbationVerdicts,
}

/// Window on `t / t_exp` treated as the end of the explosive stage.
pub const FINAL_WINDOW: (f64, f64) = (0.8, 1.0);

const RATIO_SAMPLES: usize = 200;

fn mean_ratio(base: &Trajectory, pert: &Trajectory, window: (f64, f64)) -> Result<[f64; 4]> {
    let mut sum = [0.0; 4];
    for i in 0..=RATIO_SAMPLES {
        let t = window.0 + (window.1 - window.0) * i as f64 / RATIO_SAMPLES as f64;
        let (b, p) = (evaluate_dense(base, t)?.to_array(), evaluate_dense(pert, t)?.to_array());
        for v in 0..4 {
            sum[v] += p[v] / b[v];
        }
    }
    Ok(sum.map(|s| s / (RATIO_SAMPLES + 1) as f64))
}

fn light_run(scenario: &Scenario, config: &IntegratorConfig) -> Result<(Trajectory, ExplosiveStage)> {
    let cfg = config.clone().with_t_end(scenario.t_end);
    let traj = integrator::integrate(&scenario.initial, &scenario.params, &cfg)?;
    let stage = csp::explosive_stage(&traj, &scenario.params)?
        .ok_or_else(|| Error::Consistency(format!("scenario {} has no explosive stage", scenario.name)))?;
    Ok((traj, stage))
}

/// Runs baseline and perturbed cases and compares them.
pub fn run_perturbation(spec: &PerturbationSpec, config: &IntegratorConfig) -> Result<PerturbationReport> {
    if !(spec.multiplier > 0.0 && spec.multiplier.is_finite()) {
        return Err(Error::Config(format!("multiplier {} must be positive", spec.multiplier)));
    }
    let base_params = spec.baseline.params;
    let value = base_params.get(spec.parameter) * spec.multiplier;
    let perturbed = spec.baseline.clone().with_params(base_params.with(spec.parameter, value));
    perturbed.validate()?;
    let (base, pert) = rayon::join(|| light_run(&spec.baseline, config), || light_run(&perturbed, config));
    let ((base_traj, base_stage), (pert_traj, pert_stage)) = (base?, pert?);

    let te = base_stage.end;
    let mut max_change = [0.0f64; 4];
    for s in &base_traj.states {
        let p = evaluate_dense(&pert_traj, s.t)?.to_array();
        let b = s.to_array();
        for v in 0..4 {
            if b[v] != 0.0 {
                max_change[v] = max_change[v].max((p[v] - b[v]).abs() / b[v].abs());
            }
        }
    }
    let final_window_ratio = mean_ratio(&base_traj, &pert_traj, (FINAL_WINDOW.0 * te, FINAL_WINDOW.1 * te))?;
    let window = reduction::CONSTRAINT_WINDOW;
    let constraint_window_ratio = mean_ratio(&base_traj, &pert_traj, (window.0 * te, window.1 * te))?;
    let ratio_t_exp = pert_stage.end / te;
    let verdicts = PerturbationVerdicts {
        t_exp: Direction::from_ratio(ratio_t_exp),
        final_tumor: Direction::from_ratio(final_window_ratio[0]),
        final_nk: Direction::from_ratio(final_window_ratio[1]),
        window_nk: Direction::from_ratio(constraint_window_ratio[1]),
        negligible: (ratio_t_exp - 1.0).abs() < NEGLIGIBLE_CHANGE && max_change[0] < NEGLIGIBLE_CHANGE,
    };
    Ok(PerturbationReport {
        parameter: spec.parameter,
        multiplier: spec.multiplier,
        baseline_scenario: spec.baseline.name.clone(),
        baseline_t_exp: te,
        perturbed_t_exp: pert_stage.end,
        delta_t_exp: pert_stage.end - te,
        relative_delta_t_exp: ratio_t_exp - 1.0,
        max_relative_change: max_change,
        final_window_ratio,
        constraint_window_ratio,
        verdicts,
    })
}

/// One table line: process index or variable name with its value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub target: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeTables {
    pub mode: usize,
    pub explosive: bool,
    pub api: Vec<TableEntry>,
    pub tpi: Vec<TableEntry>,
    pub pointer: Vec<TableEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointTables {
    pub t_over_texp: f64,
    pub time: f64,
    pub exhausted: usize,
    pub modes: Vec<ModeTables>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub process: usize,
    /// Sign of the mean index over the samples where it is significant.
    pub sign: i8,
    /// Share of window samples with `|II| > 2%`.
    pub fraction: f64,
    pub persistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableImportance {
    pub variable: String,
    pub entries: Vec<ImportanceEntry>,
}

impl VariableImportance {
    pub fn persistent(&self) -> BTreeSet<usize> {
        self.entries.iter().filter(|e| e.persistent).map(|e| e.process).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableReport {
    pub scenario: String,
    pub t_exp: Option<f64>,
    pub checkpoints: Vec<CheckpointTables>,
    pub importance: Vec<VariableImportance>,
}

/// Entries by decreasing `|value|` (ties by position) until their
/// cumulative `|value|` reaches [`TABLE_COVERAGE`].
pub fn truncate_entries(values: &[f64], label: impl Fn(usize) -> String) -> Vec<TableEntry> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    let mut out = Vec::new();
    let mut total = 0.0;
    for i in order {
        if total >= TABLE_COVERAGE {
            break;
        }
        total += values[i].abs();
        out.push(TableEntry { target: label(i), value: values[i] });
    }
    out
}

fn checkpoint_tables(record: &DiagnosticsRecord) -> CheckpointTables {
    let modes = (0..4)
        .map(|n| ModeTables {
            mode: n + 1,
            explosive: record.eigenvalues_re[n] > 0.0,
            api: truncate_entries(&record.api[n], |k| (k + 1).to_string()),
            tpi: truncate_entries(&record.tpi[n], |k| (k + 1).to_string()),
            pointer: truncate_entries(&record.pointer[n], |i| VARIABLES[i].to_string()),
        })
        .collect();
    CheckpointTables {
        t_over_texp: record.t_over_texp.unwrap_or(0.0),
        time: record.time,
        exhausted: record.exhausted,
        modes,
    }
}

/// Significant and persistent importance entries over window samples.
pub fn summarize_importance(samples: &[DiagnosticsRecord]) -> Vec<VariableImportance> {
    (0..4)
        .map(|n| {
            let entries = (0..PROCESS_COUNT)
                .filter_map(|k| {
                    let hits: Vec<f64> = samples
                        .iter()
                        .map(|r| r.importance[n][k])
                        .filter(|v| v.abs() > IMPORTANCE_THRESHOLD)
                        .collect();
                    if hits.is_empty() {
                        return None;
                    }
                    let fraction = hits.len() as f64 / samples.len() as f64;
                    let mean: f64 = hits.iter().sum::<f64>() / hits.len() as f64;
                    Some(ImportanceEntry {
                        process: k + 1,
                        sign: if mean >= 0.0 { 1 } else { -1 },
                        fraction,
                        persistent: fraction >= PERSISTENCE_FRACTION,
                    })
                })
                .collect();
            VariableImportance { variable: VARIABLES[n].to_string(), entries }
        })
        .collect()
}

/// Checkpoint tables and the importance summary of one scenario.
pub fn report_tables(bundle: &ScenarioBundle) -> TableReport {
    TableReport {
        scenario: bundle.scenario.name.clone(),
        t_exp: bundle.t_exp(),
        checkpoints: bundle.checkpoints.iter().map(checkpoint_tables).collect(),
        importance: summarize_importance(&bundle.window),
    }
}

/// Union over scenarios of the persistent processes of each variable.
pub fn combined_persistent_sets(reports: &[TableReport]) -> BTreeMap<String, BTreeSet<usize>> {
    let mut out: BTreeMap<String, BTreeSet<usize>> = VARIABLES.iter().map(|v| (v.to_string(), BTreeSet::new())).collect();
    for r in reports {
        for v in &r.importance {
            out.entry(v.variable.clone()).or_default().extend(v.persistent());
        }
    }
    out
}
