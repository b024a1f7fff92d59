//! Stiff integration with dense output, output grids, event location and
//! basin-of-attraction bisection.

mod basin;
mod radau;

pub use basin::{basin_threshold, classify_state, ATTRACTOR_TOL, relative_distance, stable_attractors, Attractor, BasinThreshold};
pub use radau::{OdeSystem, Segment, SolverStats};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::{self, ParameterSet, State};

/// Reporting grid. Offsets are measured from the initial time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputGrid {
    /// Log-spaced points on `[log_start, log_end]`, then a uniform step.
    LogLinear {
        log_start: f64,
        log_end: f64,
        log_points: usize,
        linear_step: f64,
    },
    /// Uniform spacing from the start.
    Uniform { step: f64 },
    /// Only the end point.
    EndOnly,
}

impl Default for OutputGrid {
    fn default() -> Self {
        OutputGrid::LogLinear { log_start: 1e-4, log_end: 5.0, log_points: 200, linear_step: 0.1 }
    }
}

impl OutputGrid {
    /// Grid times from `t0` to `t_end`, both included, strictly increasing.
    pub fn times(&self, t0: f64, t_end: f64) -> Vec<f64> {
        let span = t_end - t0;
        let mut out = vec![t0];
        match *self {
            OutputGrid::LogLinear { log_start, log_end, log_points, linear_step } => {
                let (a, b) = (log_start.log10(), log_end.log10());
                let n = log_points.max(2);
                for i in 0..n {
                    let off = 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64);
                    out.push(t0 + off);
                }
                let mut i = 1;
                loop {
                    let off = log_end + linear_step * i as f64;
                    if off >= span {
                        break;
                    }
                    out.push(t0 + off);
                    i += 1;
                }
            }
            OutputGrid::Uniform { step } => {
                let mut i = 1;
                while step * (i as f64) < span {
                    out.push(t0 + step * i as f64);
                    i += 1;
                }
            }
            OutputGrid::EndOnly => {}
        }
        out.retain(|&t| t < t_end);
        out.push(t_end);
        out.dedup();
        out
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            OutputGrid::LogLinear { log_start, log_end, log_points, linear_step } => {
                log_start > 0.0 && log_end > log_start && log_points >= 2 && linear_step > 0.0
            }
            OutputGrid::Uniform { step } => step > 0.0,
            OutputGrid::EndOnly => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid output grid {self:?}")))
        }
    }
}

/// Tolerances, horizon and reporting grid of one integration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub rtol: f64,
    /// Absolute tolerance per population `(T, N, L, C)`, in cells.
    pub atol: [f64; 4],
    /// Upper bound on the step size in days; `None` leaves it free.
    pub max_step: Option<f64>,
    pub t_end: f64,
    pub grid: OutputGrid,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: [1e-6; 4], max_step: None, t_end: 200.0, grid: OutputGrid::default() }
    }
}

impl IntegratorConfig {
    pub fn with_t_end(mut self, t_end: f64) -> Self {
        self.t_end = t_end;
        self
    }

    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = [atol; 4];
        self
    }

    pub fn with_grid(mut self, grid: OutputGrid) -> Self {
        self.grid = grid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.rtol < 1.0) {
            return Err(Error::Config(format!("rtol = {} must lie in (0, 1)", self.rtol)));
        }
        if self.atol.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::Config(format!("atol = {:?} must be positive", self.atol)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("t_end = {} must be positive", self.t_end)));
        }
        if let Some(h) = self.max_step {
            if !(h > 0.0) {
                return Err(Error::Config(format!("max_step = {h} must be positive")));
            }
        }
        self.grid.validate()
    }
}

/// Which equations produced a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Full,
    /// Two-equation `(T, C)` model; `N` and `L` come from the constraints.
    ReducedLeading,
}

/// Solution on a reporting grid plus the dense output of every step.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub model: ModelKind,
    pub params: ParameterSet,
    pub config: IntegratorConfig,
    pub states: Vec<State>,
    pub segments: Vec<Segment>,
    pub stats: SolverStats,
}

impl Trajectory {
    pub fn start(&self) -> f64 {
        self.states.first().map_or(0.0, |s| s.t)
    }

    pub fn end(&self) -> f64 {
        self.states.last().map_or(0.0, |s| s.t)
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn final_state(&self) -> State {
        *self.states.last().expect("trajectory has at least one state")
    }

    fn atol_for(&self, component: usize) -> f64 {
        match self.model {
            ModelKind::Full => self.config.atol[component],
            ModelKind::ReducedLeading => self.config.atol[[0, 3][component]],
        }
    }

    fn lift(&self, t: f64, mut y: Vec<f64>) -> State {
        for (i, v) in y.iter_mut().enumerate() {
            if *v < 0.0 && -*v < self.atol_for(i) {
                *v = 0.0;
            }
        }
        match self.model {
            ModelKind::Full => State::at(t, [y[0], y[1], y[2], y[3]]),
            ModelKind::ReducedLeading => crate::reduction::lift_reduced(t, y[0], y[1], &self.params),
        }
    }

    /// All times at which the dense output is anchored: grid times and step ends.
    pub fn sample_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = self.times();
        times.extend(self.segments.iter().map(|s| s.t_new));
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }
}

pub(crate) struct FullModel<'a> {
    pub params: &'a ParameterSet,
}

impl OdeSystem for FullModel<'_> {
    fn dim(&self) -> usize {
        4
    }

    fn rhs(&self, _t: f64, y: &DVector<f64>) -> DVector<f64> {
        let g = kinetics::rhs_unchecked(&[y[0], y[1], y[2], y[3]], self.params);
        DVector::from_column_slice(g.as_slice())
    }

    fn jacobian(&self, _t: f64, y: &DVector<f64>) -> DMatrix<f64> {
        let j = kinetics::jacobian_unchecked(&[y[0], y[1], y[2], y[3]], self.params);
        DMatrix::from_fn(4, 4, |r, c| j[(r, c)])
    }
}

/// Integrates any system and records the trajectory on the configured grid.
pub(crate) fn integrate_system<S: OdeSystem + ?Sized>(
    sys: &S,
    model: ModelKind,
    params: &ParameterSet,
    t0: f64,
    y0: Vec<f64>,
    atol: Vec<f64>,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    config.validate()?;
    if config.t_end <= t0 {
        return Err(Error::Config(format!("t_end = {} must exceed the start time {t0}", config.t_end)));
    }
    let settings = radau::Settings {
        rtol: config.rtol,
        atol: &atol,
        max_step: config.max_step.unwrap_or(f64::INFINITY),
    };
    let (segments, stats, failure) = radau::solve(sys, t0, DVector::from_vec(y0.clone()), config.t_end, &settings, |t, y| {
        for (i, v) in y.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(format!("component {i} became non-finite"));
            }
            if *v < 0.0 {
                if -*v < atol[i] {
                    *v = 0.0;
                } else {
                    return Err(format!("component {i} undershot to {v:.3e} at t = {t}"));
                }
            }
        }
        Ok(())
    });

    let reached = failure.as_ref().map_or(config.t_end, |f| segments.last().map_or(t0, |s| s.t_new).min(f.t));
    let mut grid = config.grid.times(t0, config.t_end);
    grid.retain(|&t| t <= reached);

    let mut traj = Trajectory { model, params: *params, config: config.clone(), states: Vec::with_capacity(grid.len()), segments, stats };
    let mut seg_idx = 0;
    for &t in &grid {
        let y = if t == t0 {
            y0.clone()
        } else {
            while seg_idx + 1 < traj.segments.len() && traj.segments[seg_idx].t_new < t {
                seg_idx += 1;
            }
            traj.segments[seg_idx].eval(t)
        };
        let state = traj.lift(t, y);
        traj.states.push(state);
    }

    match failure {
        None => Ok(traj),
        Some(f) => Err(Error::Integration { t: f.t, message: f.message, partial: Box::new(traj) }),
    }
}

/// Solves the full four-population model from `y0` (at time `y0.t`) to `config.t_end`.
pub fn integrate(y0: &State, params: &ParameterSet, config: &IntegratorConfig) -> Result<Trajectory> {
    y0.check_feasible()?;
    params.validate()?;
    integrate_system(&FullModel { params }, ModelKind::Full, params, y0.t, y0.to_array().to_vec(), config.atol.to_vec(), config)
}

/// Continues a run from a reached state, which may sit on the invariant
/// `T = 0` face, up to `config.t_end`.
pub(crate) fn continue_from(y: &State, params: &ParameterSet, config: &IntegratorConfig) -> Result<Trajectory> {
    let v = y.to_array();
    if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::Domain(format!("cannot continue from {v:?}")));
    }
    integrate_system(&FullModel { params }, ModelKind::Full, params, y.t, v.to_vec(), config.atol.to_vec(), config)
}

/// Continuous state at time `t`; grid times return the stored state.
pub fn evaluate_dense(traj: &Trajectory, t: f64) -> Result<State> {
    let (start, end) = (traj.start(), traj.end());
    if !(t >= start && t <= end) {
        return Err(Error::OutOfSpan { t, start, end });
    }
    if let Ok(i) = traj.states.binary_search_by(|s| s.t.total_cmp(&t)) {
        return Ok(traj.states[i]);
    }
    let idx = traj.segments.partition_point(|s| s.t_new < t).min(traj.segments.len() - 1);
    let y = traj.segments[idx].eval(t);
    Ok(traj.lift(t, y))
}

const EVENT_TOL: f64 = 1e-6;

/// First root of `event` along the trajectory at or after `from`,
/// bisected on the dense output to 1e-6 day.
pub fn locate_event_after<F>(traj: &Trajectory, from: f64, event: F) -> Option<f64>
where
    F: Fn(&State) -> f64,
{
    let value = |t: f64| evaluate_dense(traj, t).ok().map(|s| event(&s));
    let mut times: Vec<f64> = traj.sample_times().into_iter().filter(|&t| t > from).collect();
    if from >= traj.start() && from <= traj.end() {
        times.insert(0, from);
    }
    let mut prev: Option<(f64, f64)> = None;
    for t in times {
        let v = value(t)?;
        if let Some((tp, vp)) = prev {
            if vp == 0.0 {
                return Some(tp);
            }
            if vp.signum() != v.signum() || v == 0.0 {
                if v == 0.0 {
                    return Some(t);
                }
                let (mut a, mut b, mut fa) = (tp, t, vp);
                while b - a > EVENT_TOL {
                    let mid = 0.5 * (a + b);
                    let fm = value(mid)?;
                    if fm == 0.0 {
                        return Some(mid);
                    }
                    if fm.signum() == fa.signum() {
                        a = mid;
                        fa = fm;
                    } else {
                        b = mid;
                    }
                }
                return Some(0.5 * (a + b));
            }
        }
        prev = Some((t, v));
    }
    None
}

/// First sign change of `event` along the trajectory.
pub fn locate_event<F>(traj: &Trajectory, event: F) -> Option<f64>
where
    F: Fn(&State) -> f64,
{
    locate_event_after(traj, traj.start(), event)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_layout() {
        let times = OutputGrid::default().times(0.0, 200.0);
        assert_eq!(times[0], 0.0);
        assert!((times[1] - 1e-4).abs() < 1e-18);
        assert_eq!(*times.last().unwrap(), 200.0);
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        assert!(times.iter().any(|&t| (t - 5.0).abs() < 1e-12));
        assert!(times.iter().any(|&t| (t - 5.1).abs() < 1e-9));
    }

    #[test]
    fn short_horizon_grid_is_truncated() {
        let times = OutputGrid::default().times(0.0, 1.0);
        assert_eq!(*times.last().unwrap(), 1.0);
        assert!(times.iter().all(|&t| t <= 1.0));
        assert_eq!(OutputGrid::EndOnly.times(2.0, 3.0), vec![2.0, 3.0]);
    }

    #[test]
    fn config_validation() {
        assert!(IntegratorConfig::default().validate().is_ok());
        assert!(IntegratorConfig::default().with_t_end(0.0).validate().is_err());
        assert!(IntegratorConfig::default().with_tolerances(-1.0, 1.0).validate().is_err());
    }

    #[test]
    fn infeasible_start_rejected() {
        let p = ParameterSet::default();
        let err = integrate(&State::new(0.0, 1.0, 1.0, 1.0), &p, &IntegratorConfig::default());
        assert!(matches!(err, Err(Error::Domain(_))));
    }
}
