//! Computational singular perturbation analysis on the Jacobian eigenbasis:
//! timescales, mode amplitudes, participation and importance indices,
//! exhausted-mode counting, explosive-stage detection and mode tracking.

use perm::permutations4;
use nalgebra::{Matrix4, SMatrix, Vector4};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen;
use crate::error::{Error, Result};
use crate::integrator::{evaluate_dense, locate_event_after, Trajectory};
use crate::kinetics::{self, ParameterSet, ProcessSet, State, PROCESS_COUNT};

/// Mode-by-process table; row `n` is mode (or variable) `n + 1`, column `k` is process `k + 1`.
pub type IndexTable = [[f64; PROCESS_COUNT]; 4];

/// Mode-by-variable pointer table.
pub type PointerTable = [[f64; 4]; 4];

/// Tolerance of the `sum_k c_k^n = lambda_n` check.
pub const EIGENVALUE_CHECK_RTOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ModeDecomposition {
    pub state: State,
    /// Fastest first.
    pub eigenvalues: [Complex64; 4],
    /// Column `n` is the right basis vector of mode `n + 1`.
    pub alpha: Matrix4<f64>,
    /// Row `n` is the left basis vector of mode `n + 1`.
    pub beta: Matrix4<f64>,
    pub timescales: [f64; 4],
    pub amplitudes: [f64; 4],
    pub explosive: [bool; 4],
    pub complex_pair: [Option<usize>; 4],
    /// Set when mode tracking could not match modes unambiguously.
    pub ambiguous: bool,
}

impl ModeDecomposition {
    pub fn has_complex_modes(&self) -> bool {
        self.complex_pair.iter().any(Option::is_some)
    }

    fn flip(&mut self, n: usize) {
        for i in 0..4 {
            self.alpha[(i, n)] = -self.alpha[(i, n)];
            self.beta[(n, i)] = -self.beta[(n, i)];
        }
        self.amplitudes[n] = -self.amplitudes[n];
    }
}

fn build(state: State, basis: eigen::RealEigenBasis, g: Vector4<f64>) -> ModeDecomposition {
    let f = basis.beta * g;
    let eigenvalues = basis.eigenvalues;
    ModeDecomposition {
        state,
        eigenvalues,
        alpha: basis.alpha,
        beta: basis.beta,
        timescales: eigenvalues.map(|l| 1.0 / l.norm()),
        amplitudes: [f[0], f[1], f[2], f[3]],
        explosive: eigenvalues.map(|l| l.re > 0.0),
        complex_pair: basis.complex_pair,
        ambiguous: false,
    }
}

/// Eigen-decomposition of the Jacobian at a feasible state, modes sorted fastest first.
pub fn decompose(state: &State, params: &ParameterSet) -> Result<ModeDecomposition> {
    let processes = kinetics::process_rates(state, params)?;
    let y = state.to_array();
    let jac = kinetics::assemble_jacobian(&processes.gradients);
    let basis = eigen::real_basis(&jac, &y)?;
    Ok(build(*state, basis, kinetics::assemble_rhs(&processes.rates)))
}

/// `beta^n . S_k` for all modes and processes.
fn projections(decomp: &ModeDecomposition) -> SMatrix<f64, 4, PROCESS_COUNT> {
    decomp.beta * kinetics::stoichiometry()
}

fn normalize_rows(raw: IndexTable, what: &str) -> Result<IndexTable> {
    let mut out = raw;
    for (n, row) in out.iter_mut().enumerate() {
        let total: f64 = row.iter().map(|v| v.abs()).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::UndefinedTable(format!("{what} row {} has zero or non-finite weight", n + 1)));
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Ok(out)
}

/// Amplitude participation index `P^r_k`.
pub fn api(decomp: &ModeDecomposition, processes: &ProcessSet) -> Result<IndexTable> {
    let proj = projections(decomp);
    let raw: IndexTable = std::array::from_fn(|r| std::array::from_fn(|k| proj[(r, k)] * processes.rates[k]));
    normalize_rows(raw, "API")
}

/// Unnormalized timescale contributions `c_k^n = beta^n (S_k grad R^k) alpha_n`.
pub fn timescale_contributions(decomp: &ModeDecomposition, processes: &ProcessSet) -> IndexTable {
    let proj = projections(decomp);
    std::array::from_fn(|n| {
        std::array::from_fn(|k| {
            let grad = Vector4::from(processes.gradients[k]);
            proj[(n, k)] * grad.dot(&decomp.alpha.column(n))
        })
    })
}

/// Timescale participation index `J^n_k`; also checks `sum_k c_k^n = Re lambda_n`.
pub fn tpi(decomp: &ModeDecomposition, processes: &ProcessSet) -> Result<IndexTable> {
    let raw = timescale_contributions(decomp, processes);
    for (n, row) in raw.iter().enumerate() {
        let total: f64 = row.iter().sum();
        let lambda = decomp.eigenvalues[n];
        if (total - lambda.re).abs() > EIGENVALUE_CHECK_RTOL * lambda.norm() {
            return Err(Error::Consistency(format!(
                "mode {}: sum of timescale contributions {total:.12e} differs from Re(lambda) = {:.12e}",
                n + 1,
                lambda.re
            )));
        }
    }
    normalize_rows(raw, "TPI")
}

/// CSP pointer `D^m_i = alpha^i_m beta^m_i`.
pub fn pointer(decomp: &ModeDecomposition) -> PointerTable {
    std::array::from_fn(|m| std::array::from_fn(|i| decomp.alpha[(i, m)] * decomp.beta[(m, i)]))
}

/// Slow importance index of each variable given `exhausted` fast modes.
pub fn importance(decomp: &ModeDecomposition, exhausted: usize, processes: &ProcessSet) -> Result<IndexTable> {
    if exhausted >= 4 {
        return Err(Error::Config(format!("exhausted-mode count {exhausted} must be below 4")));
    }
    let proj = projections(decomp);
    let raw: IndexTable = std::array::from_fn(|n| {
        std::array::from_fn(|k| {
            (exhausted..4).map(|s| decomp.alpha[(n, s)] * proj[(s, k)]).sum::<f64>() * processes.rates[k]
        })
    });
    normalize_rows(raw, "II")
}

/// Largest `M` such that the `M` fastest modes are dissipative and each
/// contributes, over the next timescale, less than `rtol |y_i| + atol` to
/// every variable. Complex pairs are never split.
pub fn exhausted_count(decomp: &ModeDecomposition, rtol: f64, atol: f64) -> usize {
    let y = decomp.state.to_array();
    (1..4)
        .rev()
        .find(|&m| {
            if decomp.complex_pair[m - 1] == Some(m) {
                return false;
            }
            if (0..m).any(|r| decomp.eigenvalues[r].re >= 0.0) {
                return false;
            }
            let tau = decomp.timescales[m];
            (0..m).all(|r| {
                (0..4).all(|i| (decomp.alpha[(i, r)] * decomp.amplitudes[r]).abs() * tau < rtol * y[i].abs() + atol)
            })
        })
        .unwrap_or(0)
}

/// Flips each mode so that its largest-magnitude API entry is positive.
pub fn canonicalize_signs(decomp: &mut ModeDecomposition, processes: &ProcessSet) {
    let proj = projections(decomp);
    for n in 0..4 {
        let lead = (0..PROCESS_COUNT)
            .map(|k| proj[(n, k)] * processes.rates[k])
            .max_by(|a, b| a.abs().total_cmp(&b.abs()).then(std::cmp::Ordering::Greater))
            .unwrap_or(0.0);
        if lead < 0.0 {
            decomp.flip(n);
        }
    }
}

const AMBIGUITY_RTOL: f64 = 0.01;

/// Reorders and re-signs `cur` to follow `prev` by maximal basis overlap.
/// Ambiguous matches keep the timescale order and set `ambiguous`.
pub fn track_modes(prev: &ModeDecomposition, cur: &ModeDecomposition) -> ModeDecomposition {
    let overlap = prev.beta * cur.alpha;
    let ambiguous = (0..4).any(|i| {
        let mut row: Vec<f64> = (0..4).map(|j| overlap[(i, j)].abs()).collect();
        row.sort_by(|a, b| b.total_cmp(a));
        row[0] - row[1] <= AMBIGUITY_RTOL * row[0]
    });
    if ambiguous {
        let mut out = cur.clone();
        out.ambiguous = true;
        return out;
    }
    let perm = permutations4()
        .into_iter()
        .max_by(|a, b| {
            let score = |p: &[usize; 4]| (0..4).map(|i| overlap[(i, p[i])].abs()).sum::<f64>();
            score(a).total_cmp(&score(b))
        })
        .expect("24 permutations");
    let mut inverse = [0usize; 4];
    for (i, &j) in perm.iter().enumerate() {
        inverse[j] = i;
    }
    let mut out = cur.clone();
    for (i, &j) in perm.iter().enumerate() {
        out.alpha.set_column(i, &cur.alpha.column(j));
        out.beta.set_row(i, &cur.beta.row(j));
        out.eigenvalues[i] = cur.eigenvalues[j];
        out.timescales[i] = cur.timescales[j];
        out.amplitudes[i] = cur.amplitudes[j];
        out.explosive[i] = cur.explosive[j];
        out.complex_pair[i] = cur.complex_pair[j].map(|partner| inverse[partner]);
    }
    for (i, &j) in perm.iter().enumerate() {
        if overlap[(i, j)] < 0.0 {
            out.flip(i);
        }
    }
    out.ambiguous = false;
    out
}

/// Largest real part of the Jacobian spectrum; accepts `T >= 0`.
pub fn max_growth_rate(state: &State, params: &ParameterSet) -> f64 {
    let y = state.to_array();
    let jac = kinetics::jacobian_unchecked(&y, params);
    eigen::eigenvalues(&jac, &y).iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Timescales and growth rates at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimescaleRow {
    pub t: f64,
    pub timescales: [f64; 4],
    pub re_lambda: [f64; 4],
    pub explosive: bool,
}

/// Spectrum at every grid state, fastest mode first.
pub fn timescale_series(traj: &Trajectory, params: &ParameterSet) -> Vec<TimescaleRow> {
    traj.states
        .par_iter()
        .map(|s| {
            let y = s.to_array();
            let ev = eigen::eigenvalues(&kinetics::jacobian_unchecked(&y, params), &y);
            TimescaleRow {
                t: s.t,
                timescales: ev.map(|l| 1.0 / l.norm()),
                re_lambda: ev.map(|l| l.re),
                explosive: ev.iter().any(|l| l.re > 0.0),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplosiveStage {
    pub start: f64,
    /// End of the stage, `t_exp`.
    pub end: f64,
    /// 1-based index (in timescale order) of the mode with positive real part.
    pub mode: usize,
    /// False when the stage is still open at the end of the trajectory.
    pub closed: bool,
}

impl ExplosiveStage {
    pub fn t_exp(&self) -> f64 {
        self.end
    }
}

/// First interval along the trajectory where some eigenvalue has positive real part.
pub fn explosive_stage(traj: &Trajectory, params: &ParameterSet) -> Result<Option<ExplosiveStage>> {
    let growth = |s: &State| max_growth_rate(s, params);
    let first = evaluate_dense(traj, traj.start())?;
    let start = if growth(&first) > 0.0 {
        traj.start()
    } else {
        match locate_event_after(traj, traj.start(), growth) {
            Some(t) => t,
            None => return Ok(None),
        }
    };
    let probe = (start + 1e-5).min(traj.end());
    let (end, closed) = match locate_event_after(traj, probe, growth) {
        Some(t) => (t, true),
        None => (traj.end(), false),
    };
    let mid = evaluate_dense(traj, 0.5 * (start + end))?;
    let y = mid.to_array();
    let ev = eigen::eigenvalues(&kinetics::jacobian_unchecked(&y, params), &y);
    let mode = ev.iter().position(|l| l.re > 0.0).map_or(0, |i| i + 1);
    if mode == 0 {
        return Ok(None);
    }
    Ok(Some(ExplosiveStage { start, end, mode, closed }))
}

/// Exhaustion criterion settings and an optional fixed `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticOptions {
    pub fixed_m: Option<usize>,
    pub exhaustion_rtol: f64,
    pub exhaustion_atol: f64,
}

impl Default for DiagnosticOptions {
    fn default() -> Self {
        Self { fixed_m: None, exhaustion_rtol: 1e-3, exhaustion_atol: 1.0 }
    }
}

/// All diagnostic tables at one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub time: f64,
    pub t_over_texp: Option<f64>,
    pub exhausted: usize,
    pub eigenvalues_re: [f64; 4],
    pub eigenvalues_im: [f64; 4],
    pub timescales: [f64; 4],
    pub api: IndexTable,
    pub tpi: IndexTable,
    pub pointer: PointerTable,
    pub importance: IndexTable,
    pub complex_modes: bool,
    pub ambiguous: bool,
}

/// Canonicalizes signs and evaluates every index table.
pub fn diagnose(
    decomp: &ModeDecomposition,
    params: &ParameterSet,
    options: &DiagnosticOptions,
    t_exp: Option<f64>,
) -> Result<DiagnosticsRecord> {
    let processes = kinetics::process_rates(&decomp.state, params)?;
    let mut d = decomp.clone();
    canonicalize_signs(&mut d, &processes);
    let exhausted = match options.fixed_m {
        Some(m) => m,
        None => exhausted_count(&d, options.exhaustion_rtol, options.exhaustion_atol),
    };
    Ok(DiagnosticsRecord {
        time: d.state.t,
        t_over_texp: t_exp.map(|te| d.state.t / te),
        exhausted,
        eigenvalues_re: d.eigenvalues.map(|l| l.re),
        eigenvalues_im: d.eigenvalues.map(|l| l.im),
        timescales: d.timescales,
        api: api(&d, &processes)?,
        tpi: tpi(&d, &processes)?,
        pointer: pointer(&d),
        importance: importance(&d, exhausted, &processes)?,
        complex_modes: d.has_complex_modes(),
        ambiguous: d.ambiguous,
    })
}

mod perm {
    /// The 24 permutations of `0..4` in lexicographic order.
    pub fn permutations4() -> Vec<[usize; 4]> {
        let mut out = Vec::with_capacity(24);
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    for d in 0..4 {
                        let p = [a, b, c, d];
                        if (0..4).all(|i| (i + 1..4).all(|j| p[i] != p[j])) {
                            out.push(p);
                        }
                    }
                }
            }
        }
        out
    }
}
