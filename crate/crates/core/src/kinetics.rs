//! Rate laws, stoichiometry, right-hand side and analytic Jacobian of the
//! four-population tumor/immune model.
//!
//! Populations are ordered `(T, N, L, C)`: tumor cells, NK cells, CD8+ T
//! cells and circulating lymphocytes. Time is in days, populations in cells.
//! Process indices are 1-based throughout the public API.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix4, SMatrix, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of elementary processes.
pub const PROCESS_COUNT: usize = 15;

/// Population labels in state order.
pub const VARIABLES: [&str; 4] = ["T", "N", "L", "C"];

/// Model constants. Unknown keys are rejected on deserialization and
/// missing keys take the patient-9 default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParameterSet {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub g: f64,
    pub h: f64,
    pub j: f64,
    pub k: f64,
    pub l: f64,
    pub m: f64,
    pub s: f64,
    pub u: f64,
    pub alpha: f64,
    pub beta: f64,
    pub r1: f64,
    pub r2: f64,
    pub p: f64,
    pub q: f64,
}

impl Default for ParameterSet {
    fn default() -> Self {
        Self::patient9()
    }
}

/// Name of one of the 20 model constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    H,
    J,
    K,
    L,
    M,
    S,
    U,
    Alpha,
    Beta,
    R1,
    R2,
    P,
    Q,
}

impl Param {
    pub const ALL: [Param; 20] = [
        Param::A,
        Param::B,
        Param::C,
        Param::D,
        Param::E,
        Param::F,
        Param::G,
        Param::H,
        Param::J,
        Param::K,
        Param::L,
        Param::M,
        Param::S,
        Param::U,
        Param::Alpha,
        Param::Beta,
        Param::R1,
        Param::R2,
        Param::P,
        Param::Q,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::A => "a",
            Param::B => "b",
            Param::C => "c",
            Param::D => "d",
            Param::E => "e",
            Param::F => "f",
            Param::G => "g",
            Param::H => "h",
            Param::J => "j",
            Param::K => "k",
            Param::L => "l",
            Param::M => "m",
            Param::S => "s",
            Param::U => "u",
            Param::Alpha => "alpha",
            Param::Beta => "beta",
            Param::R1 => "r1",
            Param::R2 => "r2",
            Param::P => "p",
            Param::Q => "q",
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Param::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown parameter `{s}`")))
    }
}

impl ParameterSet {
    /// Patient-9 constants.
    pub fn patient9() -> Self {
        Self {
            a: 0.431,
            b: 1.02e-9,
            c: 6.41e-11,
            d: 2.34,
            e: 2.08e-7,
            f: 4.12e-2,
            g: 1.25e-2,
            h: 2.02e7,
            j: 2.49e-2,
            k: 3.66e7,
            l: 2.09,
            m: 0.204,
            s: 0.0839,
            u: 3.00e-10,
            alpha: 7.50e8,
            beta: 1.20e-2,
            r1: 1.10e-7,
            r2: 6.50e-11,
            p: 3.42e-6,
            q: 1.42e-6,
        }
    }

    pub fn get(&self, param: Param) -> f64 {
        match param {
            Param::A => self.a,
            Param::B => self.b,
            Param::C => self.c,
            Param::D => self.d,
            Param::E => self.e,
            Param::F => self.f,
            Param::G => self.g,
            Param::H => self.h,
            Param::J => self.j,
            Param::K => self.k,
            Param::L => self.l,
            Param::M => self.m,
            Param::S => self.s,
            Param::U => self.u,
            Param::Alpha => self.alpha,
            Param::Beta => self.beta,
            Param::R1 => self.r1,
            Param::R2 => self.r2,
            Param::P => self.p,
            Param::Q => self.q,
        }
    }

    pub fn set(&mut self, param: Param, value: f64) {
        let slot = match param {
            Param::A => &mut self.a,
            Param::B => &mut self.b,
            Param::C => &mut self.c,
            Param::D => &mut self.d,
            Param::E => &mut self.e,
            Param::F => &mut self.f,
            Param::G => &mut self.g,
            Param::H => &mut self.h,
            Param::J => &mut self.j,
            Param::K => &mut self.k,
            Param::L => &mut self.l,
            Param::M => &mut self.m,
            Param::S => &mut self.s,
            Param::U => &mut self.u,
            Param::Alpha => &mut self.alpha,
            Param::Beta => &mut self.beta,
            Param::R1 => &mut self.r1,
            Param::R2 => &mut self.r2,
            Param::P => &mut self.p,
            Param::Q => &mut self.q,
        };
        *slot = value;
    }

    /// Copy with one constant replaced.
    pub fn with(mut self, param: Param, value: f64) -> Self {
        self.set(param, value);
        self
    }

    /// Checks that every constant is finite and strictly positive.
    pub fn validate(&self) -> Result<()> {
        for p in Param::ALL {
            let v = self.get(p);
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Parameter(format!("{p} = {v} must be finite and > 0")));
            }
        }
        Ok(())
    }

    /// Parses a flat JSON object and validates it.
    pub fn from_json(text: &str) -> Result<Self> {
        let params: ParameterSet = serde_json::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Time-stamped population vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub t: f64,
    #[serde(rename = "T")]
    pub tumor: f64,
    #[serde(rename = "N")]
    pub nk: f64,
    #[serde(rename = "L")]
    pub cd8: f64,
    #[serde(rename = "C")]
    pub circulating: f64,
}

impl State {
    pub fn new(tumor: f64, nk: f64, cd8: f64, circulating: f64) -> Self {
        Self { t: 0.0, tumor, nk, cd8, circulating }
    }

    pub fn at(t: f64, y: [f64; 4]) -> Self {
        Self { t, tumor: y[0], nk: y[1], cd8: y[2], circulating: y[3] }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.tumor, self.nk, self.cd8, self.circulating]
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::from(self.to_array())
    }

    /// Domain check: `T > 0`, the other populations nonnegative, all finite.
    pub fn check_feasible(&self) -> Result<()> {
        let y = self.to_array();
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite population in {y:?}")));
        }
        if self.tumor <= 0.0 {
            return Err(Error::Domain(format!("T = {} must be > 0", self.tumor)));
        }
        if self.nk < 0.0 || self.cd8 < 0.0 || self.circulating < 0.0 {
            return Err(Error::Domain(format!("negative population in {y:?}")));
        }
        Ok(())
    }
}

/// Rates of the 15 processes with their gradients over `(T, N, L, C)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessSet {
    pub rates: [f64; PROCESS_COUNT],
    pub gradients: [[f64; 4]; PROCESS_COUNT],
    pub saturation: f64,
}

impl ProcessSet {
    /// Rate of process `k` (1-based).
    pub fn rate(&self, k: usize) -> Result<f64> {
        check_index(k)?;
        Ok(self.rates[k - 1])
    }

    pub fn gradient(&self, k: usize) -> Result<Vector4<f64>> {
        check_index(k)?;
        Ok(Vector4::from(self.gradients[k - 1]))
    }
}

pub type StoichiometricMatrix = SMatrix<f64, 4, PROCESS_COUNT>;

const STOICHIOMETRY: [[i8; PROCESS_COUNT]; 4] = [
    // 1  2  3  4  5  6  7  8  9 10 11 12 13 14 15
    [1, 0, 0, 0, 0, 0, -1, -1, 0, 0, 0, 0, 0, 0, 0],
    [0, 1, 0, -1, 0, 0, 0, 0, 1, 0, 0, 0, -1, 0, 0],
    [0, 0, 0, 0, -1, 0, 0, 0, 0, 1, 1, 1, 0, -1, -1],
    [0, 0, 1, 0, 0, -1, 0, 0, 0, 0, 0, 0, 0, 0, 0],
];

/// Constant 4x15 stoichiometric matrix; column `k-1` belongs to process `k`.
pub fn stoichiometry() -> StoichiometricMatrix {
    StoichiometricMatrix::from_fn(|i, k| f64::from(STOICHIOMETRY[i][k]))
}

/// Stoichiometric column of process `k` (1-based).
pub fn stoichiometric_column(k: usize) -> Result<Vector4<f64>> {
    check_index(k)?;
    Ok(Vector4::from_fn(|i, _| f64::from(STOICHIOMETRY[i][k - 1])))
}

fn check_index(k: usize) -> Result<()> {
    if (1..=PROCESS_COUNT).contains(&k) {
        Ok(())
    } else {
        Err(Error::ProcessIndex(k))
    }
}

/// Saturation `D = d x / (s + x)` with `x = (L/T)^l`, written as
/// `d / (1 + s (T/L)^l)` so it stays finite for small `T`.
/// Returns `(D, dD/dT, dD/dL)`. Accepts `T >= 0`; `L <= 0` gives zero.
pub(crate) fn saturation_parts(tumor: f64, cd8: f64, p: &ParameterSet) -> (f64, f64, f64) {
    let tumor = tumor.max(0.0);
    if cd8 <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let r = tumor / cd8;
    let w = p.s * r.powf(p.l);
    if !w.is_finite() {
        return (0.0, 0.0, 0.0);
    }
    let z = 1.0 / (1.0 + w);
    let value = p.d * z;
    let d_cd8 = p.d * p.l * w * z * z / cd8;
    let d_tumor = if tumor > 0.0 {
        -p.d * p.l * p.s * r.powf(p.l - 1.0) * z * z / cd8
    } else {
        0.0
    };
    (value, d_tumor, d_cd8)
}

/// Saturation value `D` of the CD8+ kill term.
pub fn d_saturation(state: &State, params: &ParameterSet) -> Result<f64> {
    if !(state.tumor > 0.0) {
        return Err(Error::Domain(format!("T = {} must be > 0", state.tumor)));
    }
    if state.cd8 < 0.0 {
        return Err(Error::Domain(format!("L = {} must be >= 0", state.cd8)));
    }
    Ok(saturation_parts(state.tumor, state.cd8, params).0)
}

/// Rates and gradients on the extended domain `T >= 0` used by the solvers.
/// Small negative populations are tolerated; the saturation sees `max(T, 0)`.
pub(crate) fn evaluate(y: &[f64; 4], p: &ParameterSet) -> ProcessSet {
    let [t, n, l, c] = *y;
    let (dsat, dd_t, dd_l) = saturation_parts(t, l, p);

    let mut r = [0.0; PROCESS_COUNT];
    let mut g = [[0.0; 4]; PROCESS_COUNT];

    r[0] = p.a * t * (1.0 - p.b * t);
    g[0] = [p.a * (1.0 - 2.0 * p.b * t), 0.0, 0.0, 0.0];

    r[1] = p.e * c;
    g[1] = [0.0, 0.0, 0.0, p.e];

    r[2] = p.alpha;

    r[3] = p.f * n;
    g[3] = [0.0, p.f, 0.0, 0.0];

    r[4] = p.m * l;
    g[4] = [0.0, 0.0, p.m, 0.0];

    r[5] = p.beta * c;
    g[5] = [0.0, 0.0, 0.0, p.beta];

    r[6] = p.c * n * t;
    g[6] = [p.c * n, p.c * t, 0.0, 0.0];

    let kill = dsat * t;
    let kill_t = dsat + t * dd_t;
    let kill_l = t * dd_l;
    r[7] = kill;
    g[7] = [kill_t, 0.0, kill_l, 0.0];

    let t2 = t * t;
    let recruit = t2 / (p.h + t2);
    r[8] = p.g * recruit * n;
    g[8] = [
        p.g * n * 2.0 * t * p.h / ((p.h + t2) * (p.h + t2)),
        p.g * recruit,
        0.0,
        0.0,
    ];

    let kill2 = kill * kill;
    let hill = kill2 / (p.k + kill2);
    let hill_prime = 2.0 * kill * p.k / ((p.k + kill2) * (p.k + kill2));
    r[9] = p.j * hill * l;
    g[9] = [
        p.j * l * hill_prime * kill_t,
        0.0,
        p.j * (hill + l * hill_prime * kill_l),
        0.0,
    ];

    r[10] = p.r1 * n * t;
    g[10] = [p.r1 * n, p.r1 * t, 0.0, 0.0];

    r[11] = p.r2 * c * t;
    g[11] = [p.r2 * c, 0.0, 0.0, p.r2 * t];

    r[12] = p.p * n * t;
    g[12] = [p.p * n, p.p * t, 0.0, 0.0];

    r[13] = p.q * l * t;
    g[13] = [p.q * l, 0.0, p.q * t, 0.0];

    r[14] = p.u * n * l * l;
    g[14] = [0.0, p.u * l * l, 2.0 * p.u * n * l, 0.0];

    ProcessSet { rates: r, gradients: g, saturation: dsat }
}

/// `S * R` from a rate vector.
pub(crate) fn assemble_rhs(rates: &[f64; PROCESS_COUNT]) -> Vector4<f64> {
    let mut out = Vector4::zeros();
    for (i, row) in STOICHIOMETRY.iter().enumerate() {
        out[i] = row
            .iter()
            .zip(rates)
            .filter(|(s, _)| **s != 0)
            .map(|(s, r)| f64::from(*s) * r)
            .sum();
    }
    out
}

/// `sum_k S_k (grad R^k)^T` from gradients.
pub(crate) fn assemble_jacobian(grads: &[[f64; 4]; PROCESS_COUNT]) -> Matrix4<f64> {
    let mut jac = Matrix4::zeros();
    for (i, row) in STOICHIOMETRY.iter().enumerate() {
        for (k, s) in row.iter().enumerate() {
            if *s != 0 {
                for j in 0..4 {
                    jac[(i, j)] += f64::from(*s) * grads[k][j];
                }
            }
        }
    }
    jac
}

pub(crate) fn rhs_unchecked(y: &[f64; 4], p: &ParameterSet) -> Vector4<f64> {
    assemble_rhs(&evaluate(y, p).rates)
}

pub(crate) fn jacobian_unchecked(y: &[f64; 4], p: &ParameterSet) -> Matrix4<f64> {
    assemble_jacobian(&evaluate(y, p).gradients)
}

/// All 15 rates with analytic gradients at a feasible state.
pub fn process_rates(state: &State, params: &ParameterSet) -> Result<ProcessSet> {
    state.check_feasible()?;
    Ok(evaluate(&state.to_array(), params))
}

/// Time derivative `g(y) = S R(y)` in cells/day.
pub fn rhs(state: &State, params: &ParameterSet) -> Result<Vector4<f64>> {
    Ok(assemble_rhs(&process_rates(state, params)?.rates))
}

/// Analytic Jacobian of [`rhs`] in 1/day.
pub fn jacobian(state: &State, params: &ParameterSet) -> Result<Matrix4<f64>> {
    Ok(assemble_jacobian(&process_rates(state, params)?.gradients))
}

/// Outer product `S_k (grad R^k)^T` of process `k` (1-based).
pub fn rate_jacobian_term(k: usize, state: &State, params: &ParameterSet) -> Result<Matrix4<f64>> {
    let column = stoichiometric_column(k)?;
    let grad = process_rates(state, params)?.gradient(k)?;
    Ok(column * grad.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tp_state() -> State {
        State::new(1e6, 1e3, 10.0, 6e8)
    }

    #[test]
    fn default_is_patient9() {
        let p = ParameterSet::default();
        assert_eq!(p.alpha, 7.5e8);
        assert_eq!(p.l, 2.09);
        p.validate().unwrap();
    }

    #[test]
    fn json_defaults_and_unknown_keys() {
        let p = ParameterSet::from_json(r#"{"d": 1.5}"#).unwrap();
        assert_eq!(p.d, 1.5);
        assert_eq!(p.a, 0.431);
        assert!(ParameterSet::from_json(r#"{"zeta": 1.0}"#).is_err());
        assert!(ParameterSet::from_json(r#"{"a": -1.0}"#).is_err());
    }

    #[test]
    fn param_names_round_trip() {
        for p in Param::ALL {
            assert_eq!(p.name().parse::<Param>().unwrap(), p);
        }
        let params = ParameterSet::default().with(Param::R2, 2.0);
        assert_eq!(params.get(Param::R2), 2.0);
    }

    #[test]
    fn saturation_hand_values() {
        let p = ParameterSet::default();
        let equal = d_saturation(&State::new(1e6, 0.0, 1e6, 0.0), &p).unwrap();
        assert_relative_eq!(equal, 2.34 / (0.0839 + 1.0), max_relative = 1e-14);
        let x = 10f64.powf(-5.0 * 2.09);
        let small = d_saturation(&tp_state(), &p).unwrap();
        assert_relative_eq!(small, 2.34 * x / (0.0839 + x), max_relative = 1e-12);
        assert!((small - 9.9e-10).abs() < 0.1e-10);
        assert_eq!(d_saturation(&State::new(5.0, 1.0, 0.0, 1.0), &p).unwrap(), 0.0);
        assert!(d_saturation(&State::new(0.0, 1.0, 1.0, 1.0), &p).is_err());
    }

    #[test]
    fn rates_hand_values() {
        let p = ParameterSet::default();
        let rates = process_rates(&tp_state(), &p).unwrap();
        assert_relative_eq!(rates.rate(1).unwrap(), 0.431 * 1e6 * (1.0 - 1.02e-3), max_relative = 1e-14);
        assert_relative_eq!(rates.rate(2).unwrap(), 124.8, max_relative = 1e-14);
        assert_relative_eq!(rates.rate(13).unwrap(), 3420.0, max_relative = 1e-14);
        assert_relative_eq!(rates.rate(7).unwrap(), 0.0641, max_relative = 1e-12);
        assert!(rates.rate(0).is_err());
        assert!(rates.rate(16).is_err());
    }

    #[test]
    fn rates_linear_in_nk_vanish() {
        let p = ParameterSet::default();
        let rates = process_rates(&State::new(3e5, 0.0, 40.0, 1e9), &p).unwrap();
        for k in [4, 9, 13, 15] {
            assert_eq!(rates.rate(k).unwrap(), 0.0);
        }
    }

    #[test]
    fn tumor_equation_hand_value() {
        let p = ParameterSet::default();
        let g = rhs(&tp_state(), &p).unwrap();
        let r = process_rates(&tp_state(), &p).unwrap();
        assert_relative_eq!(g[0], r.rates[0] - r.rates[6] - r.rates[7], max_relative = 1e-15);
        assert!((g[0] - 430560.315).abs() < 1e-3);
    }

    #[test]
    fn circulating_equation_at_steady_value() {
        let p = ParameterSet::default();
        let g = rhs(&State::new(2e3, 1e4, 5.0, p.alpha / p.beta), &p).unwrap();
        assert_eq!(g[3], 0.0);
        let jac = jacobian(&tp_state(), &p).unwrap();
        assert_eq!(jac[(3, 3)], -p.beta);
    }

    #[test]
    fn trivial_rate_jacobian_terms() {
        let p = ParameterSet::default();
        assert_eq!(rate_jacobian_term(3, &tp_state(), &p).unwrap(), Matrix4::zeros());
        let six = rate_jacobian_term(6, &tp_state(), &p).unwrap();
        let mut expected = Matrix4::zeros();
        expected[(3, 3)] = -p.beta;
        assert_eq!(six, expected);
        assert!(rate_jacobian_term(16, &tp_state(), &p).is_err());
    }

    #[test]
    fn stoichiometry_rows() {
        let s = stoichiometry();
        let row_sum: Vec<f64> = (0..4).map(|i| s.row(i).iter().map(|v| v.abs()).sum()).collect();
        assert_eq!(row_sum, vec![3.0, 4.0, 6.0, 2.0]);
        assert_eq!(s[(2, 14)], -1.0);
    }

    #[test]
    fn tfe_limit_cancels() {
        let p = ParameterSet::default();
        let n0 = p.alpha * p.e / (p.beta * p.f);
        let r = evaluate(&[0.0, n0, 0.0, p.alpha / p.beta], &p);
        assert_relative_eq!(r.rates[1], r.rates[3], max_relative = 1e-14);
        for k in [0, 6, 7, 8, 10, 11, 12, 13] {
            assert_eq!(r.rates[k], 0.0);
        }
    }
}
