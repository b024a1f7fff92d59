//! Tumor-free and high-tumor equilibria, their stability, and one-parameter
//! bifurcation sweeps.
//!
//! High-tumor equilibria are found by collapsing `g(y) = 0` onto `T*`:
//! `N*(T*)` and the kill fraction `D*(T*)` follow in closed form, `L*` is
//! obtained twice (by inverting the saturation and from the `L` balance,
//! a quadratic), and the mismatch of the two is the scalar residual.

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen;
use crate::error::{Error, Result};
use crate::kinetics::{self, Param, ParameterSet, State};

/// Real parts must lie below `-STABILITY_MARGIN` for an equilibrium to count as stable.
pub const STABILITY_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EquilibriumKind {
    #[serde(rename = "TFE")]
    Tfe,
    #[serde(rename = "HTE")]
    Hte,
}

impl std::fmt::Display for EquilibriumKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EquilibriumKind::Tfe => "TFE",
            EquilibriumKind::Hte => "HTE",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub kind: EquilibriumKind,
    pub state: State,
    pub eigenvalues: [Complex64; 4],
    pub stable: bool,
    pub feasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenvalueRecord {
    pub re: f64,
    pub im: f64,
}

/// Serialized form: `{kind, T, N, L, C, eigenvalues: [{re, im}; 4], stable, feasible}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumRecord {
    pub kind: EquilibriumKind,
    #[serde(rename = "T")]
    pub tumor: f64,
    #[serde(rename = "N")]
    pub nk: f64,
    #[serde(rename = "L")]
    pub cd8: f64,
    #[serde(rename = "C")]
    pub circulating: f64,
    pub eigenvalues: Vec<EigenvalueRecord>,
    pub stable: bool,
    pub feasible: bool,
}

impl Equilibrium {
    pub fn to_array(&self) -> [f64; 4] {
        self.state.to_array()
    }

    pub fn record(&self) -> EquilibriumRecord {
        EquilibriumRecord {
            kind: self.kind,
            tumor: self.state.tumor,
            nk: self.state.nk,
            cd8: self.state.cd8,
            circulating: self.state.circulating,
            eigenvalues: self.eigenvalues.iter().map(|l| EigenvalueRecord { re: l.re, im: l.im }).collect(),
            stable: self.stable,
            feasible: self.feasible,
        }
    }

    fn from_eigenvalues(kind: EquilibriumKind, y: [f64; 4], eigenvalues: [Complex64; 4]) -> Self {
        Equilibrium {
            kind,
            state: State::at(0.0, y),
            eigenvalues,
            stable: eigenvalues.iter().all(|l| l.re < -STABILITY_MARGIN),
            feasible: y.iter().all(|v| *v >= 0.0),
        }
    }
}

fn nk_free(p: &ParameterSet) -> f64 {
    p.alpha * p.e / (p.beta * p.f)
}

/// `{a - d - alpha c e / (beta f), -f, -m, -beta}` at the feasible tumor-free state.
pub fn tfe_eigenvalues(params: &ParameterSet) -> [f64; 4] {
    let p = params;
    [p.a - p.d - p.c * nk_free(p), -p.f, -p.m, -p.beta]
}

/// Closed-form stability test of the tumor-free state: `(a - d) beta f < alpha c e`.
pub fn tfe_is_stable(params: &ParameterSet) -> bool {
    let p = params;
    (p.a - p.d) * p.beta * p.f < p.alpha * p.c * p.e
}

/// The feasible tumor-free state and its infeasible twin with `L* < 0`.
///
/// Both are limits `T -> 0`; the kill term at `T = 0` is evaluated as its
/// `L/T -> infinity` limit `d`, so the two share the tumor eigenvalue. The
/// twin's `L` eigenvalue is `+m`, hence it is always unstable.
pub fn tfe(params: &ParameterSet) -> (Equilibrium, Equilibrium) {
    let p = params;
    let n0 = nk_free(p);
    let c0 = p.alpha / p.beta;
    let lam = tfe_eigenvalues(p).map(|v| Complex64::new(v, 0.0));
    let feasible = Equilibrium::from_eigenvalues(EquilibriumKind::Tfe, [0.0, n0, 0.0, c0], lam);
    let l2 = -p.m * p.f * p.beta / (p.u * p.e * p.alpha);
    let lam2 = [lam[0], lam[1], Complex64::new(p.m, 0.0), lam[3]];
    let twin = Equilibrium::from_eigenvalues(EquilibriumKind::Tfe, [0.0, n0, l2, c0], lam2);
    (feasible, twin)
}

/// `N*(T*) = alpha e (h + T^2) / (beta (f h + h p T + (f - g) T^2 + p T^3))`.
pub fn n_star(tumor: f64, params: &ParameterSet) -> Result<f64> {
    let p = params;
    if !(tumor > 0.0) {
        return Err(Error::Domain(format!("T* = {tumor} must be > 0")));
    }
    let t2 = tumor * tumor;
    let den = p.beta * (p.f * p.h + p.h * p.p * tumor + (p.f - p.g) * t2 + p.p * t2 * tumor);
    if !(den > 0.0) {
        return Err(Error::InfeasibleBranch(tumor));
    }
    Ok(p.alpha * p.e * (p.h + t2) / den)
}

/// Coefficients `(A, B, C)` of the `L` balance `A L^2 + B L + C = 0` at fixed `T*`, `D*`.
pub fn cd8_quadratic(tumor: f64, nk: f64, kill: f64, params: &ParameterSet) -> (f64, f64, f64) {
    let p = params;
    let dt = kill * tumor;
    let a = -p.u * nk;
    let b = -p.m + p.j * dt * dt / (p.k + dt * dt) - p.q * tumor;
    let c = (p.r1 * nk + p.r2 * p.alpha / p.beta) * tumor;
    (a, b, c)
}

fn positive_root(a: f64, b: f64, c: f64) -> Result<f64> {
    if a == 0.0 {
        return Ok(-c / b);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Err(Error::Domain(format!("negative discriminant {disc:.3e} in the L balance")));
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let roots = [q / a, c / q];
    Ok(roots.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Scalar residual at a trial `T*` with the intermediate quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HteResidual {
    /// `L*_D - L*_-`; a sentinel outside the admissible kill-fraction range.
    pub value: f64,
    /// Whether `D*` lies strictly inside `(0, d)`.
    pub feasible: bool,
    pub nk: f64,
    pub kill: f64,
    pub cd8_saturation: f64,
    pub cd8_balance: f64,
}

/// Residual `F(T*) = L*_D - L*_-`.
///
/// When `D* <= 0` the value is `-L*_-` evaluated at `D* = 0`, the residual's
/// one-sided limit; when `D* >= d` it is `+inf`, the limit of `L*_D`. Both
/// sentinels carry the sign of the adjacent feasible branch, so sign changes
/// at the edge of the admissible range are genuine roots.
pub fn hte_residual(tumor: f64, params: &ParameterSet) -> Result<HteResidual> {
    let p = params;
    let nk = n_star(tumor, p)?;
    let kill = p.a * (1.0 - p.b * tumor) - p.c * nk;
    if kill >= p.d {
        return Ok(HteResidual {
            value: f64::INFINITY,
            feasible: false,
            nk,
            kill,
            cd8_saturation: f64::INFINITY,
            cd8_balance: f64::NAN,
        });
    }
    let kill_eff = kill.max(0.0);
    let (qa, qb, qc) = cd8_quadratic(tumor, nk, kill_eff, p);
    let balance = positive_root(qa, qb, qc)?;
    if kill <= 0.0 {
        return Ok(HteResidual { value: -balance, feasible: false, nk, kill, cd8_saturation: 0.0, cd8_balance: balance });
    }
    let saturation = tumor * (p.s * kill / (p.d - kill)).powf(1.0 / p.l);
    Ok(HteResidual { value: saturation - balance, feasible: true, nk, kill, cd8_saturation: saturation, cd8_balance: balance })
}

/// Scan settings for [`find_hte`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HteSearch {
    pub low: f64,
    pub high: f64,
    pub grid_points: usize,
}

impl Default for HteSearch {
    fn default() -> Self {
        Self { low: 1.0, high: 1e10, grid_points: 400 }
    }
}

const BISECTION_RTOL: f64 = 1e-10;

fn bisect(params: &ParameterSet, mut a: f64, mut b: f64, mut fa: f64) -> Option<f64> {
    while b - a > BISECTION_RTOL * b {
        let mid = 0.5 * (a + b);
        let fm = hte_residual(mid, params).ok()?.value;
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
    let (ra, rb) = (hte_residual(a, params).ok()?, hte_residual(b, params).ok()?);
    (ra.feasible && rb.feasible).then_some(0.5 * (a + b))
}

fn scaled_residual(y: &[f64; 4], p: &ParameterSet) -> f64 {
    let g = kinetics::rhs_unchecked(y, p);
    (0..4).map(|i| g[i].abs() / y[i].abs().max(1.0)).fold(0.0, f64::max)
}

/// Newton polish of `g(y) = 0` started from the bisection estimate.
fn polish(y0: [f64; 4], p: &ParameterSet) -> [f64; 4] {
    let mut y = y0;
    let mut best = (scaled_residual(&y, p), y);
    for _ in 0..20 {
        let g = kinetics::rhs_unchecked(&y, p);
        let jac: Matrix4<f64> = kinetics::jacobian_unchecked(&y, p);
        let Some(step) = jac.lu().solve(&(-g)) else { break };
        let next: [f64; 4] = std::array::from_fn(|i| y[i] + step[i]);
        if next.iter().zip(&y0).any(|(a, b)| (a - b).abs() > 1e-3 * b.abs().max(1.0)) {
            break;
        }
        y = next;
        let r = scaled_residual(&y, p);
        if r < best.0 {
            best = (r, y);
        }
        if r < 1e-14 || Vector4::from(step).iter().zip(&y).all(|(s, v)| s.abs() <= 1e-15 * v.abs().max(1.0)) {
            break;
        }
    }
    best.1
}

/// Numeric eigenvalues of the Jacobian at an interior equilibrium.
fn numeric_eigenvalues(y: &[f64; 4], p: &ParameterSet) -> [Complex64; 4] {
    eigen::eigenvalues(&kinetics::jacobian_unchecked(y, p), y)
}

/// High-tumor equilibria with `T*` inside the search range, sorted by `T*`.
pub fn find_hte(params: &ParameterSet, search: &HteSearch) -> Result<Vec<Equilibrium>> {
    params.validate()?;
    if !(search.low > 0.0 && search.high > search.low && search.grid_points >= 2) {
        return Err(Error::Config(format!("invalid HTE search {search:?}")));
    }
    let n = search.grid_points;
    let ratio = (search.high / search.low).ln();
    let grid: Vec<f64> = (0..n)
        .map(|i| search.low * (ratio * i as f64 / (n - 1) as f64).exp())
        .collect();
    let values: Vec<Option<f64>> = grid
        .par_iter()
        .map(|&t| hte_residual(t, params).ok().map(|r| r.value))
        .collect();

    let mut roots: Vec<f64> = Vec::new();
    for i in 0..n - 1 {
        let (Some(fa), Some(fb)) = (values[i], values[i + 1]) else { continue };
        if fa == 0.0 {
            roots.push(grid[i]);
            continue;
        }
        if fa.signum() != fb.signum() && fb != 0.0 {
            if let Some(root) = bisect(params, grid[i], grid[i + 1], fa) {
                roots.push(root);
            }
        }
    }

    let mut out: Vec<Equilibrium> = Vec::new();
    for tumor in roots {
        let r = hte_residual(tumor, params)?;
        if !r.feasible {
            continue;
        }
        let y = polish([tumor, r.nk, r.cd8_balance, params.alpha / params.beta], params);
        if out.iter().any(|e| (e.state.tumor - y[0]).abs() <= 1e-8 * y[0]) {
            continue;
        }
        let eq = Equilibrium::from_eigenvalues(EquilibriumKind::Hte, y, numeric_eigenvalues(&y, params));
        if eq.feasible {
            out.push(eq);
        }
    }
    out.sort_by(|a, b| a.state.tumor.total_cmp(&b.state.tumor));
    Ok(out)
}

/// Refills eigenvalues and the stability flag.
pub fn classify_stability(eq: &Equilibrium, params: &ParameterSet) -> Equilibrium {
    let eigenvalues = match eq.kind {
        EquilibriumKind::Tfe => {
            let (feasible, twin) = tfe(params);
            if eq.state.cd8 < 0.0 {
                twin.eigenvalues
            } else {
                feasible.eigenvalues
            }
        }
        EquilibriumKind::Hte => numeric_eigenvalues(&eq.to_array(), params),
    };
    Equilibrium::from_eigenvalues(eq.kind, eq.to_array(), eigenvalues)
}

/// Every equilibrium: both tumor-free states followed by the high-tumor ones.
pub fn all_equilibria(params: &ParameterSet, search: &HteSearch) -> Result<Vec<Equilibrium>> {
    let (e0, e0_twin) = tfe(params);
    let mut out = vec![e0, e0_twin];
    out.extend(find_hte(params, search)?);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Linear,
    Log,
}

/// One equilibrium at one swept value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BifurcationPoint {
    pub value: f64,
    pub t_star: f64,
    pub stable: bool,
    pub kind: EquilibriumKind,
}

/// Branch `0` is the tumor-free state; high-tumor branches are numbered by
/// decreasing `T*` at each swept value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationBranch {
    pub parameter: Param,
    pub branch_id: usize,
    pub samples: Vec<BifurcationPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationScan {
    pub parameter: Param,
    pub values: Vec<f64>,
    pub hte_counts: Vec<usize>,
    pub branches: Vec<BifurcationBranch>,
    /// Parameter value where the tumor-free state changes stability.
    pub transcritical: Option<f64>,
    /// Last swept value before two high-tumor branches disappear together.
    pub saddle_node: Option<f64>,
}

impl BifurcationScan {
    /// Rows `(branch_id, point)` ordered by swept value then branch.
    pub fn rows(&self) -> Vec<(usize, BifurcationPoint)> {
        let mut rows: Vec<(usize, BifurcationPoint)> = self
            .branches
            .iter()
            .flat_map(|b| b.samples.iter().map(move |s| (b.branch_id, *s)))
            .collect();
        rows.sort_by(|a, b| a.1.value.total_cmp(&b.1.value).then(a.0.cmp(&b.0)));
        rows
    }
}

pub fn sweep_values(from: f64, to: f64, steps: usize, spacing: Spacing) -> Result<Vec<f64>> {
    if steps < 2 || !(to > from) {
        return Err(Error::Config(format!("sweep needs steps >= 2 and to > from (got {from}..{to}, {steps})")));
    }
    let frac = |i: usize| i as f64 / (steps - 1) as f64;
    match spacing {
        Spacing::Linear => Ok((0..steps).map(|i| from + (to - from) * frac(i)).collect()),
        Spacing::Log => {
            if from <= 0.0 {
                return Err(Error::Config("log sweep needs a positive start".into()));
            }
            let (a, b) = (from.ln(), to.ln());
            Ok((0..steps).map(|i| (a + (b - a) * frac(i)).exp()).collect())
        }
    }
}

fn refine_transcritical(params: &ParameterSet, param: Param, mut a: f64, mut b: f64) -> f64 {
    let lead = |v: f64| tfe_eigenvalues(&params.with(param, v))[0];
    let fa = lead(a);
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * b.abs().max(a.abs()) {
            break;
        }
        let mid = 0.5 * (a + b);
        if lead(mid).signum() == fa.signum() {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Sweeps one constant and records every equilibrium with its stability.
pub fn bifurcation_scan(
    params: &ParameterSet,
    parameter: Param,
    values: &[f64],
    search: &HteSearch,
) -> Result<BifurcationScan> {
    if values.len() < 2 || values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("sweep values must be increasing with at least two entries".into()));
    }
    let per_value: Vec<(bool, Vec<Equilibrium>)> = values
        .par_iter()
        .map(|&v| {
            let p = params.with(parameter, v);
            p.validate()?;
            Ok((tfe_is_stable(&p), find_hte(&p, search)?))
        })
        .collect::<Result<_>>()?;

    let mut branches: Vec<BifurcationBranch> = vec![BifurcationBranch { parameter, branch_id: 0, samples: vec![] }];
    for (&v, (tfe_stable, htes)) in values.iter().zip(&per_value) {
        branches[0].samples.push(BifurcationPoint { value: v, t_star: 0.0, stable: *tfe_stable, kind: EquilibriumKind::Tfe });
        for (rank, eq) in htes.iter().rev().enumerate() {
            let id = rank + 1;
            if branches.len() <= id {
                branches.push(BifurcationBranch { parameter, branch_id: id, samples: vec![] });
            }
            branches[id].samples.push(BifurcationPoint { value: v, t_star: eq.state.tumor, stable: eq.stable, kind: EquilibriumKind::Hte });
        }
    }

    let hte_counts: Vec<usize> = per_value.iter().map(|(_, h)| h.len()).collect();
    let transcritical = (0..values.len() - 1)
        .find(|&i| per_value[i].0 != per_value[i + 1].0)
        .map(|i| refine_transcritical(params, parameter, values[i], values[i + 1]));
    let saddle_node = (0..values.len() - 1)
        .find(|&i| hte_counts[i] >= 2 && hte_counts[i + 1] + 2 == hte_counts[i])
        .map(|i| values[i]);

    Ok(BifurcationScan { parameter, values: values.to_vec(), hte_counts, branches, transcritical, saddle_node })
}
