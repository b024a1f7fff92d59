//! Command-line front end. Every subcommand writes its files under
//! `<out>/<run name>/` together with a `config.json` echo of its settings.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::csp;
use crate::equilibria::{self, HteSearch, Spacing};
use crate::error::{Error, Result};
use crate::harness::{self, PerturbationSpec, Scenario, ScenarioOptions};
use crate::integrator::{self, IntegratorConfig};
use crate::kinetics::{Param, ParameterSet};
use crate::output;
use crate::reduction;

/// Environment variable holding the default output root.
pub const OUT_ENV: &str = "TUMOR_CSP_OUT";

#[derive(Debug, Clone, Parser, Serialize)]
#[command(name = "tumor-csp", version, about = "Tumor-immune kinetics with timescale diagnostics")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GlobalArgs {
    /// Parameter file (flat JSON object); missing keys keep patient-9 values.
    #[arg(long, global = true)]
    pub params: Option<PathBuf>,
    /// Output root directory.
    #[arg(long, global = true, env = OUT_ENV, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 1e-8)]
    pub rtol: f64,
    /// Absolute tolerance in cells, applied to every population.
    #[arg(long, global = true, default_value_t = 1e-6)]
    pub atol: f64,
    /// Worker threads for parallel sweeps (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Use this many exhausted modes instead of the tolerance criterion.
    #[arg(long = "fixed-M", global = true)]
    pub fixed_m: Option<usize>,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Integrate a scenario; writes trajectory.csv, timescales.csv, run.json.
    Simulate(ScenarioArgs),
    /// Tumor-free and high-tumor equilibria; writes equilibria.json.
    Equilibria,
    /// Sweep one constant; writes bifurcation.csv and bifurcation.json.
    Bifurcate(BifurcateArgs),
    /// Mode diagnostics along a scenario; writes diagnostics.csv and friends.
    Csp(ScenarioArgs),
    /// Leading-order reduced model against the full one.
    Reduce(ScenarioArgs),
    /// Scale one constant and compare with the baseline scenario.
    Perturb(PerturbArgs),
    /// Bisect on the initial tumor load for the basin boundary.
    Threshold(ThresholdArgs),
    /// Checkpoint tables and the importance summary.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScenarioArgs {
    /// Built-in name (TP, TR, TP1, TR1) or a scenario JSON file.
    #[arg(long, default_value = "TP")]
    pub scenario: String,
    /// Horizon in days; overrides the scenario's own.
    #[arg(long = "t-end")]
    pub t_end: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SpacingArg {
    Linear,
    Log,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BifurcateArgs {
    #[arg(long, default_value = "d")]
    pub param: Param,
    #[arg(long)]
    pub from: f64,
    #[arg(long)]
    pub to: f64,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = SpacingArg::Linear)]
    pub spacing: SpacingArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PerturbArgs {
    #[arg(long, default_value = "TP")]
    pub scenario: String,
    /// Constant to scale; omit to run the standard set (a x0.8, a x1.2, c x0.6, e x0.6).
    #[arg(long, requires = "multiplier")]
    pub param: Option<Param>,
    #[arg(long, requires = "param")]
    pub multiplier: Option<f64>,
    #[arg(long = "t-end")]
    pub t_end: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ThresholdArgs {
    /// `TP1-family` fixes (N, L, C)(0) = (1e3, 10, 6e8); a scenario name or
    /// file takes them from that scenario instead.
    #[arg(long, default_value = "TP1-family")]
    pub scenario: String,
    #[arg(long, default_value_t = 3.0e5)]
    pub low: f64,
    #[arg(long, default_value_t = 3.4e5)]
    pub high: f64,
    #[arg(long = "t-end", default_value_t = 200.0)]
    pub t_end: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    /// Scenarios to tabulate; defaults to all built-ins.
    #[arg(long = "scenario")]
    pub scenarios: Vec<String>,
}

impl Cli {
    fn params(&self) -> Result<ParameterSet> {
        match &self.global.params {
            Some(path) => ParameterSet::from_file(path),
            None => Ok(ParameterSet::default()),
        }
    }

    fn integrator(&self) -> Result<IntegratorConfig> {
        let cfg = IntegratorConfig::default().with_tolerances(self.global.rtol, self.global.atol);
        cfg.validate()?;
        Ok(cfg)
    }

    fn options(&self) -> Result<ScenarioOptions> {
        let mut options = ScenarioOptions { integrator: self.integrator()?, ..ScenarioOptions::default() };
        if let Some(m) = self.global.fixed_m {
            if m > 3 {
                return Err(Error::Config(format!("--fixed-M {m} must be at most 3")));
            }
            options.diagnostics.fixed_m = Some(m);
        }
        Ok(options)
    }

    /// Built-in name or JSON file; `--params` replaces the scenario's constants
    /// only when the scenario does not name its own file.
    fn scenario(&self, name: &str, t_end: Option<f64>) -> Result<Scenario> {
        let mut scenario = if Scenario::BUILTIN_NAMES.contains(&name) {
            Scenario::builtin(name)?.with_params(self.params()?)
        } else if Path::new(name).is_file() {
            let s = Scenario::from_file(Path::new(name))?;
            if self.global.params.is_some() {
                s.clone().with_params(self.params()?)
            } else {
                s
            }
        } else {
            return Err(Error::UnknownScenario(name.to_string()));
        };
        if let Some(t) = t_end {
            scenario = scenario.with_t_end(t);
        }
        scenario.validate()?;
        Ok(scenario)
    }

    fn run_dir(&self, name: &str) -> Result<PathBuf> {
        let dir = self.global.out.join(name);
        std::fs::create_dir_all(&dir)?;
        output::write_json(&dir.join("config.json"), self)?;
        Ok(dir)
    }
}

#[derive(Serialize)]
struct RunSummary<'a> {
    scenario: &'a Scenario,
    t_end: f64,
    final_state: [f64; 4],
    explosive_stage: Option<csp::ExplosiveStage>,
    attractor: Option<equilibria::EquilibriumKind>,
    solver: &'a integrator::SolverStats,
}

fn simulate(cli: &Cli, args: &ScenarioArgs) -> Result<()> {
    let scenario = cli.scenario(&args.scenario, args.t_end)?;
    let config = cli.integrator()?.with_t_end(scenario.t_end);
    let traj = integrator::integrate(&scenario.initial, &scenario.params, &config)?;
    let stage = csp::explosive_stage(&traj, &scenario.params)?;
    let attractors = integrator::stable_attractors(&scenario.params)?;
    let (attractor, _) = harness::classify_trajectory(&traj, &attractors)?;
    let dir = cli.run_dir(&scenario.name)?;
    output::write_trajectory_csv(&dir.join("trajectory.csv"), &traj)?;
    output::write_timescales_csv(&dir.join("timescales.csv"), &csp::timescale_series(&traj, &scenario.params))?;
    output::write_json(
        &dir.join("run.json"),
        &RunSummary {
            scenario: &scenario,
            t_end: traj.end(),
            final_state: traj.final_state().to_array(),
            explosive_stage: stage,
            attractor,
            solver: &traj.stats,
        },
    )
}

fn equilibria_cmd(cli: &Cli) -> Result<()> {
    let params = cli.params()?;
    let all = equilibria::all_equilibria(&params, &HteSearch::default())?;
    let dir = cli.run_dir("equilibria")?;
    output::write_equilibria_json(&dir.join("equilibria.json"), &all)
}

#[derive(Serialize)]
struct BifurcationSummary {
    parameter: Param,
    transcritical: Option<f64>,
    saddle_node: Option<f64>,
    hte_counts: Vec<usize>,
    values: Vec<f64>,
}

fn bifurcate(cli: &Cli, args: &BifurcateArgs) -> Result<()> {
    let spacing = match args.spacing {
        SpacingArg::Linear => Spacing::Linear,
        SpacingArg::Log => Spacing::Log,
    };
    let values = equilibria::sweep_values(args.from, args.to, args.steps, spacing)?;
    let scan = equilibria::bifurcation_scan(&cli.params()?, args.param, &values, &HteSearch::default())?;
    let dir = cli.run_dir("bifurcation")?;
    output::write_bifurcation_csv(&dir.join("bifurcation.csv"), &scan)?;
    output::write_json(
        &dir.join("bifurcation.json"),
        &BifurcationSummary {
            parameter: scan.parameter,
            transcritical: scan.transcritical,
            saddle_node: scan.saddle_node,
            hte_counts: scan.hte_counts.clone(),
            values: scan.values.clone(),
        },
    )
}

fn csp_cmd(cli: &Cli, args: &ScenarioArgs) -> Result<()> {
    let scenario = cli.scenario(&args.scenario, args.t_end)?;
    let bundle = harness::run_scenario(&scenario, &cli.options()?)?;
    let dir = cli.run_dir(&scenario.name)?;
    output::write_trajectory_csv(&dir.join("trajectory.csv"), &bundle.trajectory)?;
    output::write_timescales_csv(&dir.join("timescales.csv"), &csp::timescale_series(&bundle.trajectory, &scenario.params))?;
    output::write_diagnostics_csv(&dir.join("diagnostics.csv"), &bundle.checkpoints)?;
    output::write_diagnostics_csv(&dir.join("diagnostics_grid.csv"), &bundle.grid)?;
    output::write_json(
        &dir.join("run.json"),
        &RunSummary {
            scenario: &scenario,
            t_end: bundle.trajectory.end(),
            final_state: bundle.trajectory.final_state().to_array(),
            explosive_stage: bundle.explosive_stage,
            attractor: bundle.attractor,
            solver: &bundle.trajectory.stats,
        },
    )
}

#[derive(Serialize)]
struct ReduceSummary {
    parameter_count: usize,
    parameters: Vec<(&'static str, f64)>,
    t_exp: Option<f64>,
    constraint_window_max: Option<(f64, f64)>,
    constraint_after_max: Option<(f64, f64)>,
    window_max_error: [f64; 4],
    full_attractor: Option<equilibria::EquilibriumKind>,
    reduced_attractor: Option<equilibria::EquilibriumKind>,
    attractor_agreement: bool,
}

fn reduce(cli: &Cli, args: &ScenarioArgs) -> Result<()> {
    let scenario = cli.scenario(&args.scenario, args.t_end)?;
    let config = cli.integrator()?.with_t_end(scenario.t_end);
    let params = &scenario.params;
    let full = integrator::integrate(&scenario.initial, params, &config)?;
    let t_exp = csp::explosive_stage(&full, params)?.map(|s| s.end);
    let reduced = reduction::simulate_reduced(scenario.initial.tumor, scenario.initial.circulating, params, &config)?;
    let window = match t_exp {
        Some(te) => (reduction::CONSTRAINT_WINDOW.0 * te, reduction::CONSTRAINT_WINDOW.1 * te),
        None => (full.start(), full.end()),
    };
    let attractors = integrator::stable_attractors(params)?;
    let comparison = reduction::compare_reduced(&full, &reduced, window, &attractors)?;
    let errors = reduction::constraint_errors(&full, params, t_exp);
    let dir = cli.run_dir(&scenario.name)?;
    output::write_reduced_csv(&dir.join("reduced_trajectory.csv"), &reduced)?;
    output::write_constraint_errors_csv(&dir.join("constraint_errors.csv"), &errors)?;
    let model = reduction::LeadingOrderModel::new(params);
    output::write_json(
        &dir.join("reduction.json"),
        &ReduceSummary {
            parameter_count: model.parameters().len(),
            parameters: model.parameters().to_vec(),
            t_exp,
            constraint_window_max: errors.window_max,
            constraint_after_max: errors.after_max,
            window_max_error: comparison.window_max,
            full_attractor: comparison.full_attractor,
            reduced_attractor: comparison.reduced_attractor,
            attractor_agreement: comparison.attractor_agreement,
        },
    )
}

fn perturb(cli: &Cli, args: &PerturbArgs) -> Result<()> {
    let baseline = cli.scenario(&args.scenario, args.t_end)?;
    let list = match (args.param, args.multiplier) {
        (Some(p), Some(m)) => vec![(p, m)],
        _ => harness::standard_perturbations(),
    };
    let config = cli.integrator()?;
    let reports = list
        .into_iter()
        .map(|(parameter, multiplier)| {
            harness::run_perturbation(&PerturbationSpec { parameter, multiplier, baseline: baseline.clone() }, &config)
        })
        .collect::<Result<Vec<_>>>()?;
    let dir = cli.run_dir(&baseline.name)?;
    output::write_json(&dir.join("perturbations.json"), &reports)
}

/// Initial `(N, L, C)` of the tumor-persistence threshold family.
pub const TP1_FAMILY: [f64; 3] = [1e3, 1e1, 6e8];

fn threshold(cli: &Cli, args: &ThresholdArgs) -> Result<()> {
    let (fixed, params, name) = if args.scenario == "TP1-family" {
        (TP1_FAMILY, cli.params()?, "threshold".to_string())
    } else {
        let s = cli.scenario(&args.scenario, None)?;
        ([s.initial.nk, s.initial.cd8, s.initial.circulating], s.params, format!("{}-threshold", s.name))
    };
    let config = cli.integrator()?.with_t_end(args.t_end);
    let result = integrator::basin_threshold(fixed[0], fixed[1], fixed[2], &params, (args.low, args.high), &config)?;
    let dir = cli.run_dir(&name)?;
    output::write_json(&dir.join("threshold.json"), &result)
}

fn report(cli: &Cli, args: &ReportArgs) -> Result<()> {
    let names: Vec<String> = if args.scenarios.is_empty() {
        Scenario::BUILTIN_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        args.scenarios.clone()
    };
    let mut options = cli.options()?;
    if cli.global.fixed_m.is_none() {
        options.diagnostics.fixed_m = ScenarioOptions::table_reproduction().diagnostics.fixed_m;
    }
    options.grid_diagnostics = false;
    let mut reports = Vec::new();
    for name in &names {
        let scenario = cli.scenario(name, None)?;
        let bundle = harness::run_scenario(&scenario, &options)?;
        let tables = harness::report_tables(&bundle);
        let dir = cli.run_dir(&scenario.name)?;
        output::write_json(&dir.join("report.json"), &tables)?;
        output::write_diagnostics_csv(&dir.join("diagnostics.csv"), &bundle.checkpoints)?;
        reports.push(tables);
    }
    let dir = cli.run_dir("report")?;
    output::write_json(&dir.join("persistent_importance.json"), &harness::combined_persistent_sets(&reports))
}

/// Runs one parsed command inside a thread pool sized by `--jobs`.
pub fn run(cli: &Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.global.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(jobs);
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Equilibria => equilibria_cmd(cli),
        Command::Bifurcate(a) => bifurcate(cli, a),
        Command::Csp(a) => csp_cmd(cli, a),
        Command::Reduce(a) => reduce(cli, a),
        Command::Perturb(a) => perturb(cli, a),
        Command::Threshold(a) => threshold(cli, a),
        Command::Report(a) => report(cli, a),
    })
}
