//! Invariant checks shared by the property suite and the acceptance run.
#![allow(dead_code)]

use nalgebra::{DMatrix, Matrix4, Vector4};
use num_complex::Complex64;
use tumor_csp::csp::{self, DiagnosticOptions};
use tumor_csp::kinetics::{self, ParameterSet, State, PROCESS_COUNT};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Per-variable flux scale `sum_k |S_ik R_k|`, the magnitude that cancels into `g_i`.
pub fn flux_scale(state: &State, p: &ParameterSet) -> [f64; 4] {
    let rates = kinetics::process_rates(state, p).unwrap().rates;
    let s = kinetics::stoichiometry();
    std::array::from_fn(|i| (0..PROCESS_COUNT).map(|k| (s[(i, k)] * rates[k]).abs()).sum())
}

fn rates_at(y: [f64; 4], p: &ParameterSet) -> [f64; PROCESS_COUNT] {
    kinetics::process_rates(&State::new(y[0], y[1], y[2], y[3]), p).unwrap().rates
}

/// Coefficients `c` of `det(lambda I - J) = lambda^4 + c[0] lambda^3 + ... + c[3]`
/// as signed sums of principal minors.
pub fn characteristic_polynomial(j: &Matrix4<f64>) -> [f64; 4] {
    let mut c = [0.0; 4];
    for mask in 1u32..16 {
        let idx: Vec<usize> = (0..4).filter(|i| mask & (1 << i) != 0).collect();
        let k = idx.len();
        let minor = DMatrix::from_fn(k, k, |a, b| j[(idx[a], idx[b])]).determinant();
        c[k - 1] += if k % 2 == 0 { minor } else { -minor };
    }
    c
}

/// Newton polish of a root of the characteristic polynomial.
pub fn polish_root(c: &[f64; 4], start: Complex64) -> Complex64 {
    let mut z = start;
    for _ in 0..50 {
        let (mut p, mut dp) = (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
        for coef in c {
            dp = dp * z + p;
            p = p * z + coef;
        }
        let step = p / dp;
        z -= step;
        if step.norm() <= 1e-15 * z.norm() {
            break;
        }
    }
    z
}

pub fn rhs_equals_stoichiometry_times_rates(state: &State, p: &ParameterSet) -> Check {
    let g = kinetics::rhs(state, p).unwrap();
    let rates = kinetics::process_rates(state, p).unwrap().rates;
    let flux = flux_scale(state, p);
    // Assembled row by row from the signed process lists.
    let lists: [&[(usize, f64)]; 4] = [
        &[(1, 1.0), (7, -1.0), (8, -1.0)],
        &[(2, 1.0), (4, -1.0), (9, 1.0), (13, -1.0)],
        &[(5, -1.0), (10, 1.0), (11, 1.0), (12, 1.0), (14, -1.0), (15, -1.0)],
        &[(3, 1.0), (6, -1.0)],
    ];
    for i in 0..4 {
        let expected: f64 = lists[i].iter().map(|&(k, s)| s * rates[k - 1]).sum();
        ensure!((g[i] - expected).abs() <= 1e-12 * flux[i], "row {i}: {} vs {expected}", g[i]);
    }
    Ok(())
}

pub fn jacobian_matches_central_differences(state: &State, p: &ParameterSet) -> Check {
    let procs = kinetics::process_rates(state, p).unwrap();
    let y = state.to_array();
    // Differences of the individual rates avoid the cancellation inside g.
    let mut fd = [[0.0; 4]; PROCESS_COUNT];
    for j in 0..4 {
        let h = 1e-5 * y[j];
        let (mut up, mut down) = (y, y);
        up[j] += h;
        down[j] -= h;
        let (ru, rd) = (rates_at(up, p), rates_at(down, p));
        for k in 0..PROCESS_COUNT {
            fd[k][j] = (ru[k] - rd[k]) / (2.0 * h);
        }
    }
    for k in 0..PROCESS_COUNT {
        for j in 0..4 {
            let (a, b) = (procs.gradients[k][j], fd[k][j]);
            // Below an elasticity of 1e-4 the difference quotient is
            // round-off limited; such entries are held to an absolute bound.
            let floor = 1e-4 * procs.rates[k].abs() / y[j];
            ensure!((a - b).abs() <= 1e-6 * a.abs().max(floor), "dR{}/dy{j}: analytic {a} vs fd {b}", k + 1);
        }
    }
    let jac = kinetics::jacobian(state, p).unwrap();
    let s = kinetics::stoichiometry();
    for i in 0..4 {
        for j in 0..4 {
            let terms: Vec<f64> = (0..PROCESS_COUNT).map(|k| s[(i, k)] * fd[k][j]).collect();
            let expected: f64 = terms.iter().sum();
            let rate_floor = (0..PROCESS_COUNT).map(|k| (s[(i, k)] * procs.rates[k]).abs()).sum::<f64>() * 1e-4 / y[j];
            let scale = expected.abs().max(terms.iter().map(|t| t.abs()).fold(0.0, f64::max)).max(rate_floor);
            ensure!((jac[(i, j)] - expected).abs() <= 1e-6 * scale, "J[{i}][{j}] {} vs {expected}", jac[(i, j)]);
        }
    }
    Ok(())
}

pub fn biorthonormal_and_reconstructs_rhs(state: &State, p: &ParameterSet) -> Check {
    let d = csp::decompose(state, p).map_err(|e| e.to_string())?;
    let id = d.beta * d.alpha;
    ensure!((id - Matrix4::identity()).abs().max() < 1e-10, "beta alpha = {id}");
    let g = kinetics::rhs(state, p).unwrap();
    let recon: Vector4<f64> = (0..4).map(|r| d.alpha.column(r) * d.amplitudes[r]).sum();
    let flux = flux_scale(state, p);
    for i in 0..4 {
        ensure!(
            (recon[i] - g[i]).abs() <= 1e-8 * g[i].abs().max(1e-6 * flux[i]),
            "component {i}: {} vs {}",
            recon[i],
            g[i]
        );
    }
    Ok(())
}

pub fn contributions_sum_to_eigenvalues(state: &State, p: &ParameterSet) -> Check {
    let d = csp::decompose(state, p).map_err(|e| e.to_string())?;
    let procs = kinetics::process_rates(state, p).unwrap();
    let s = kinetics::stoichiometry();
    let jac = kinetics::jacobian(state, p).unwrap();
    let poly = characteristic_polynomial(&jac);
    let mut independent: Vec<Complex64> = jac.complex_eigenvalues().iter().map(|z| polish_root(&poly, *z)).collect();
    for n in 0..4 {
        let beta = d.beta.row(n);
        let alpha = d.alpha.column(n);
        let total: f64 = (0..PROCESS_COUNT)
            .map(|k| (beta * s.column(k))[0] * Vector4::from(procs.gradients[k]).dot(&alpha))
            .sum();
        let lambda = d.eigenvalues[n];
        ensure!((total - lambda.re).abs() <= 1e-8 * lambda.norm(), "mode {n}: {total} vs {lambda}");
        let (pos, nearest) = independent
            .iter()
            .enumerate()
            .map(|(i, l)| (i, (l - lambda).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        ensure!(nearest <= 1e-8 * lambda.norm(), "mode {n}: {lambda} vs characteristic root at distance {nearest}");
        independent.remove(pos);
    }
    Ok(())
}

pub fn index_tables_normalized(state: &State, p: &ParameterSet, fixed: usize) -> Check {
    let d = csp::decompose(state, p).map_err(|e| e.to_string())?;
    let options = DiagnosticOptions { fixed_m: Some(fixed), ..DiagnosticOptions::default() };
    let r = csp::diagnose(&d, p, &options, None).map_err(|e| e.to_string())?;
    for n in 0..4 {
        let api: f64 = r.api[n].iter().map(|v| v.abs()).sum();
        let tpi: f64 = r.tpi[n].iter().map(|v| v.abs()).sum();
        let po: f64 = r.pointer[n].iter().sum();
        let ii: f64 = r.importance[n].iter().map(|v| v.abs()).sum();
        for (name, v) in [("API", api), ("TPI", tpi), ("Po", po), ("II", ii)] {
            ensure!((v - 1.0).abs() < 1e-10, "{name} row {n} sums to {v}");
        }
    }
    Ok(())
}
