//! Slow-manifold constraints for `N` and `L`, their error along full-model
//! trajectories, and the reduced models obtained by enforcing them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::equilibria::EquilibriumKind;
use crate::error::{Error, Result};
use crate::integrator::{evaluate_dense, integrate_system, Attractor, IntegratorConfig, ModelKind, OdeSystem, Trajectory};
use crate::kinetics::{self, ParameterSet, State};

/// Constrained values `N^ = eC/(pT)` and `L^ = r2 C T / (qT + m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintValues {
    pub nk: f64,
    pub cd8: f64,
}

pub fn constraint_values(state: &State, params: &ParameterSet) -> Result<ConstraintValues> {
    if !(state.tumor > 0.0) {
        return Err(Error::Domain(format!("T = {} must be > 0", state.tumor)));
    }
    let model = LeadingOrderModel::new(params);
    Ok(ConstraintValues {
        nk: model.nk(state.tumor, state.circulating),
        cd8: model.cd8_ratio(state.tumor, state.circulating) * state.tumor,
    })
}

/// The two-equation `(T, C)` model. It holds only the ten constants it
/// uses, so no other parameter can enter its dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadingOrderModel {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub l: f64,
    pub s: f64,
    pub alpha: f64,
    pub beta: f64,
    pub e_over_p: f64,
    pub q_over_r2: f64,
    pub m_over_r2: f64,
}

impl LeadingOrderModel {
    pub const PARAMETER_NAMES: [&'static str; 10] = ["a", "b", "d", "l", "s", "alpha", "beta", "e/p", "q/r2", "m/r2"];

    pub fn new(p: &ParameterSet) -> Self {
        Self {
            a: p.a,
            b: p.b,
            d: p.d,
            l: p.l,
            s: p.s,
            alpha: p.alpha,
            beta: p.beta,
            e_over_p: p.e / p.p,
            q_over_r2: p.q / p.r2,
            m_over_r2: p.m / p.r2,
        }
    }

    pub fn parameters(&self) -> [(&'static str, f64); 10] {
        let v = [
            self.a,
            self.b,
            self.d,
            self.l,
            self.s,
            self.alpha,
            self.beta,
            self.e_over_p,
            self.q_over_r2,
            self.m_over_r2,
        ];
        std::array::from_fn(|i| (Self::PARAMETER_NAMES[i], v[i]))
    }

    pub fn nk(&self, tumor: f64, circulating: f64) -> f64 {
        self.e_over_p * circulating / tumor
    }

    /// `L^ / T = C / ((q/r2) T + m/r2)`, finite as `T -> 0`.
    pub fn cd8_ratio(&self, tumor: f64, circulating: f64) -> f64 {
        circulating / (self.q_over_r2 * tumor + self.m_over_r2)
    }

    /// Kill fraction `D` at `L/T = rho` and its derivative in `rho`.
    fn kill(&self, rho: f64) -> (f64, f64) {
        if !(rho > 0.0) {
            return (0.0, 0.0);
        }
        let x = rho.powf(self.l);
        let den = x + self.s;
        (self.d * x / den, self.d * self.s * self.l * rho.powf(self.l - 1.0) / (den * den))
    }

    /// `(dT/dt, dC/dt)`.
    pub fn rhs(&self, tumor: f64, circulating: f64) -> (f64, f64) {
        let (kill, _) = self.kill(self.cd8_ratio(tumor, circulating));
        (self.a * tumor * (1.0 - self.b * tumor) - kill * tumor, self.alpha - self.beta * circulating)
    }

    pub fn jacobian(&self, tumor: f64, circulating: f64) -> [[f64; 2]; 2] {
        let den = self.q_over_r2 * tumor + self.m_over_r2;
        let rho = circulating / den;
        let (kill, dkill) = self.kill(rho);
        let drho_dt = -circulating * self.q_over_r2 / (den * den);
        let drho_dc = 1.0 / den;
        [
            [
                self.a * (1.0 - 2.0 * self.b * tumor) - kill - tumor * dkill * drho_dt,
                -tumor * dkill * drho_dc,
            ],
            [0.0, -self.beta],
        ]
    }
}

impl OdeSystem for LeadingOrderModel {
    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, _t: f64, y: &DVector<f64>) -> DVector<f64> {
        let (dt, dc) = LeadingOrderModel::rhs(self, y[0], y[1]);
        DVector::from_vec(vec![dt, dc])
    }

    fn jacobian(&self, _t: f64, y: &DVector<f64>) -> DMatrix<f64> {
        let j = LeadingOrderModel::jacobian(self, y[0], y[1]);
        DMatrix::from_row_slice(2, 2, &[j[0][0], j[0][1], j[1][0], j[1][1]])
    }
}

/// `(dT/dt, dC/dt)` of the leading-order reduced model.
pub fn reduced_rhs_leading(tumor: f64, circulating: f64, params: &ParameterSet) -> Result<(f64, f64)> {
    if !(tumor > 0.0) {
        return Err(Error::Domain(format!("T = {tumor} must be > 0")));
    }
    if !(circulating > 0.0) {
        return Err(Error::Domain(format!("C = {circulating} must be > 0")));
    }
    Ok(LeadingOrderModel::new(params).rhs(tumor, circulating))
}

/// Higher-order reduced right-hand side in `(T, N, L, C)` order, with the
/// kill fraction at the instantaneous `(T, L)`.
pub fn reduced_rhs_higher(state: &State, params: &ParameterSet) -> Result<[f64; 4]> {
    state.check_feasible()?;
    let p = params;
    let (t, l, c) = (state.tumor, state.cd8, state.circulating);
    let kill = kinetics::d_saturation(state, p)?;
    let growth = p.a * t * (1.0 - p.b * t) - kill * t;
    let supply = p.alpha - p.beta * c;
    let exchange = p.r2 * c * t - p.q * l * t;
    Ok([growth - exchange, -growth + supply + exchange, growth + supply + exchange, supply])
}

/// Full state with `N`, `L` taken from the constraints.
pub(crate) fn lift_reduced(t: f64, tumor: f64, circulating: f64, params: &ParameterSet) -> State {
    let model = LeadingOrderModel::new(params);
    State {
        t,
        tumor,
        nk: model.nk(tumor, circulating),
        cd8: model.cd8_ratio(tumor, circulating) * tumor,
        circulating,
    }
}

/// Integrates the leading-order model from `(T0, C0)` at `t = 0`.
pub fn simulate_reduced(tumor0: f64, circulating0: f64, params: &ParameterSet, config: &IntegratorConfig) -> Result<Trajectory> {
    params.validate()?;
    if !(tumor0 > 0.0 && circulating0 > 0.0) {
        return Err(Error::Domain(format!("reduced start needs T0, C0 > 0 (got {tumor0}, {circulating0})")));
    }
    let model = LeadingOrderModel::new(params);
    integrate_system(
        &model,
        ModelKind::ReducedLeading,
        params,
        0.0,
        vec![tumor0, circulating0],
        vec![config.atol[0], config.atol[3]],
        config,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintErrorPoint {
    pub t: f64,
    pub t_over_texp: Option<f64>,
    pub re_n: f64,
    pub re_l: f64,
}

impl ConstraintErrorPoint {
    pub fn max_abs(&self) -> f64 {
        self.re_n.abs().max(self.re_l.abs())
    }
}

fn error_point(state: &State, params: &ParameterSet, t_exp: Option<f64>) -> Option<ConstraintErrorPoint> {
    if !(state.nk > 0.0 && state.cd8 > 0.0) {
        return None;
    }
    let hat = constraint_values(state, params).ok()?;
    Some(ConstraintErrorPoint {
        t: state.t,
        t_over_texp: t_exp.map(|te| state.t / te),
        re_n: (state.nk - hat.nk) / state.nk,
        re_l: (state.cd8 - hat.cd8) / state.cd8,
    })
}

/// Relative constraint errors along a trajectory with window summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintErrors {
    pub points: Vec<ConstraintErrorPoint>,
    pub t_exp: Option<f64>,
    /// Largest `|RE_N|` and `|RE_L|` over `t / t_exp` in `[0.2, 0.95]`.
    pub window_max: Option<(f64, f64)>,
    /// Largest `|RE_N|` and `|RE_L|` after `t_exp`.
    pub after_max: Option<(f64, f64)>,
}

/// Window on `t / t_exp` used for the summary.
pub const CONSTRAINT_WINDOW: (f64, f64) = (0.2, 0.95);

const WINDOW_SAMPLES: usize = 400;

fn fold_max(points: impl Iterator<Item = ConstraintErrorPoint>) -> Option<(f64, f64)> {
    points.fold(None, |acc, p| {
        let (n, l) = acc.unwrap_or((0.0, 0.0));
        Some((n.max(p.re_n.abs()), l.max(p.re_l.abs())))
    })
}

/// `RE_N = (N - N^)/N` and `RE_L = (L - L^)/L` at every grid point. The
/// window summary also samples the dense output uniformly in `t / t_exp`.
pub fn constraint_errors(traj: &Trajectory, params: &ParameterSet, t_exp: Option<f64>) -> ConstraintErrors {
    let points: Vec<ConstraintErrorPoint> = traj.states.iter().filter_map(|s| error_point(s, params, t_exp)).collect();
    let (window_max, after_max) = match t_exp {
        None => (None, None),
        Some(te) => {
            let (lo, hi) = (CONSTRAINT_WINDOW.0 * te, CONSTRAINT_WINDOW.1 * te);
            let dense = (0..=WINDOW_SAMPLES).filter_map(|i| {
                let t = lo + (hi - lo) * i as f64 / WINDOW_SAMPLES as f64;
                evaluate_dense(traj, t).ok().and_then(|s| error_point(&s, params, t_exp))
            });
            let grid = points.iter().copied().filter(|p| p.t >= lo && p.t <= hi);
            let window = fold_max(dense.chain(grid));
            let after = fold_max(points.iter().copied().filter(|p| p.t > te));
            (window, after)
        }
    };
    ConstraintErrors { points, t_exp, window_max, after_max }
}

/// Reduced versus full trajectory on the full model's grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedComparison {
    pub times: Vec<f64>,
    /// `|x_red - x_full| / max(|x_full|, 1)` per variable `(T, N, L, C)`.
    pub relative_errors: Vec<[f64; 4]>,
    pub window: (f64, f64),
    pub window_max: [f64; 4],
    pub window_mean: [f64; 4],
    pub full_attractor: Option<EquilibriumKind>,
    pub reduced_attractor: Option<EquilibriumKind>,
    pub attractor_agreement: bool,
}

/// Attractor whose tumor load matches `T` within 1%. The reduced model's
/// `N^` diverges as `T -> 0`, so only the tumor population is compared.
pub fn classify_tumor(tumor: f64, attractors: &[Attractor]) -> Option<EquilibriumKind> {
    attractors
        .iter()
        .map(|a| (a.kind, (tumor - a.state[0]).abs() / a.state[0].abs().max(1.0)))
        .filter(|(_, d)| *d < crate::integrator::ATTRACTOR_TOL)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
}

pub fn compare_reduced(full: &Trajectory, reduced: &Trajectory, window: (f64, f64), attractors: &[Attractor]) -> Result<ReducedComparison> {
    let end = full.end().min(reduced.end());
    let mut times = Vec::new();
    let mut errors = Vec::new();
    for s in full.states.iter().filter(|s| s.t <= end) {
        let r = evaluate_dense(reduced, s.t)?;
        let (a, b) = (s.to_array(), r.to_array());
        errors.push(std::array::from_fn(|i| (b[i] - a[i]).abs() / a[i].abs().max(1.0)));
        times.push(s.t);
    }
    let mut window_max = [0.0; 4];
    let mut window_sum = [0.0; 4];
    let mut count = 0usize;
    for (t, e) in times.iter().zip(&errors) {
        if *t >= window.0 && *t <= window.1 {
            count += 1;
            for i in 0..4 {
                window_max[i] = f64::max(window_max[i], e[i]);
                window_sum[i] += e[i];
            }
        }
    }
    let window_mean = window_sum.map(|s| if count > 0 { s / count as f64 } else { 0.0 });
    let full_attractor = classify_tumor(full.final_state().tumor, attractors);
    let reduced_attractor = classify_tumor(reduced.final_state().tumor, attractors);
    Ok(ReducedComparison {
        times,
        relative_errors: errors,
        window,
        window_max,
        window_mean,
        full_attractor,
        reduced_attractor,
        attractor_agreement: full_attractor.is_some() && full_attractor == reduced_attractor,
    })
}
