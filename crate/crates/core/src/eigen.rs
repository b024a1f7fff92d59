//! Real eigenbasis of a 4x4 Jacobian.
//!
//! The matrix is first balanced by the population scale, `J' = S^-1 J S`
//! with `S = diag(max(|y_i|, 1))`, since raw entries span some twenty
//! orders of magnitude. Eigenvalues come from a Schur decomposition and
//! eigenvectors from the SVD null space of `J' - lambda I`.

use std::cmp::Ordering;

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest accepted condition number of the (balanced) eigenvector matrix.
pub const MAX_CONDITION: f64 = 1e12;

const PAIR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RealEigenBasis {
    /// Sorted by decreasing modulus (fastest first).
    pub eigenvalues: [Complex64; 4],
    /// Right basis, one column per mode.
    pub alpha: Matrix4<f64>,
    /// Left basis `alpha^-1`, one row per mode.
    pub beta: Matrix4<f64>,
    pub complex_pair: [Option<usize>; 4],
    pub condition: f64,
}

pub fn population_scale(y: &[f64; 4]) -> Vector4<f64> {
    Vector4::from_fn(|i, _| y[i].abs().max(1.0))
}

fn balance(jac: &Matrix4<f64>, scale: &Vector4<f64>) -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| jac[(i, j)] * scale[j] / scale[i])
}

fn mode_order(a: &Complex64, b: &Complex64) -> Ordering {
    let (ma, mb) = (a.norm(), b.norm());
    let tie = (ma - mb).abs() <= 1e-12 * ma.max(mb);
    if !tie {
        return mb.total_cmp(&ma);
    }
    a.re.total_cmp(&b.re).then(b.im.total_cmp(&a.im))
}

/// Eigenvalues sorted fastest first.
pub fn eigenvalues(jac: &Matrix4<f64>, y: &[f64; 4]) -> [Complex64; 4] {
    let balanced = balance(jac, &population_scale(y));
    let ev = balanced.complex_eigenvalues();
    let mut out = [ev[0], ev[1], ev[2], ev[3]];
    out.sort_by(mode_order);
    out
}

fn is_complex(l: &Complex64) -> bool {
    l.im.abs() > PAIR_TOL * l.norm()
}

fn real_null_vector(m: &Matrix4<f64>) -> Vector4<f64> {
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let idx = svd.singular_values.imin();
    let mut v: Vector4<f64> = v_t.row(idx).transpose();
    let lead = v.iamax();
    if v[lead] < 0.0 {
        v = -v;
    }
    v / v.norm()
}

fn complex_null_vector(m: &Matrix4<Complex64>) -> Vector4<Complex64> {
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let idx = svd.singular_values.imin();
    let v: Vector4<Complex64> = v_t.row(idx).adjoint();
    let lead = (0..4).max_by(|&a, &b| v[a].norm().total_cmp(&v[b].norm())).unwrap_or(0);
    let phase = v[lead].conj() / v[lead].norm();
    let v = v * phase;
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    v / Complex64::new(norm, 0.0)
}

/// Replaces Schur eigenvalues by the two-sided Rayleigh quotients of the
/// computed basis (`projected = beta J alpha`). The Schur values of a badly
/// balanced matrix can be off by ~1e-7 relative while the vectors are not.
fn refine_eigenvalues(eigenvalues: &mut [Complex64; 4], pairs: &[Option<usize>; 4], projected: &Matrix4<f64>) {
    let mut n = 0;
    while n < 4 {
        if pairs[n] == Some(n + 1) {
            let (a, b, c, d) = (projected[(n, n)], projected[(n, n + 1)], projected[(n + 1, n)], projected[(n + 1, n + 1)]);
            let half_trace = 0.5 * (a + d);
            let disc = 0.25 * (a - d) * (a - d) + b * c;
            if disc < 0.0 {
                let upper = Complex64::new(half_trace, (-disc).sqrt());
                eigenvalues[n] = upper;
                eigenvalues[n + 1] = upper.conj();
            }
            n += 2;
        } else {
            eigenvalues[n] = Complex64::new(projected[(n, n)], 0.0);
            n += 1;
        }
    }
}

/// Real right/left eigenbasis. Complex-conjugate pairs contribute their real
/// and imaginary parts as two consecutive columns sharing one modulus.
pub fn real_basis(jac: &Matrix4<f64>, y: &[f64; 4]) -> Result<RealEigenBasis> {
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite Jacobian".into()));
    }
    let scale = population_scale(y);
    let balanced = balance(jac, &scale);
    let ev = balanced.complex_eigenvalues();
    let mut values = [ev[0], ev[1], ev[2], ev[3]];
    values.sort_by(mode_order);

    let mut alpha_b = Matrix4::zeros();
    let mut pairs = [None; 4];
    let mut eigenvalues = values;
    let mut n = 0;
    while n < 4 {
        let lambda = values[n];
        if is_complex(&lambda) && n + 1 < 4 {
            let upper = if lambda.im > 0.0 { lambda } else { lambda.conj() };
            let shifted = Matrix4::<Complex64>::from_fn(|i, j| {
                let diag = if i == j { upper } else { Complex64::new(0.0, 0.0) };
                Complex64::new(balanced[(i, j)], 0.0) - diag
            });
            let v = complex_null_vector(&shifted);
            alpha_b.set_column(n, &v.map(|c| c.re));
            alpha_b.set_column(n + 1, &v.map(|c| c.im));
            eigenvalues[n] = upper;
            eigenvalues[n + 1] = upper.conj();
            pairs[n] = Some(n + 1);
            pairs[n + 1] = Some(n);
            n += 2;
        } else {
            let shifted = balanced - Matrix4::identity() * lambda.re;
            alpha_b.set_column(n, &real_null_vector(&shifted));
            eigenvalues[n] = Complex64::new(lambda.re, 0.0);
            n += 1;
        }
    }

    let sv = alpha_b.singular_values();
    let condition = sv.max() / sv.min();
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Defective(condition));
    }
    let beta_b = alpha_b.try_inverse().ok_or(Error::Defective(f64::INFINITY))?;
    refine_eigenvalues(&mut eigenvalues, &pairs, &(beta_b * balanced * alpha_b));
    let alpha = Matrix4::from_fn(|i, j| alpha_b[(i, j)] * scale[i]);
    let beta = Matrix4::from_fn(|i, j| beta_b[(i, j)] / scale[j]);
    Ok(RealEigenBasis { eigenvalues, alpha, beta, complex_pair: pairs, condition })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix_basis() {
        let j = Matrix4::from_diagonal(&Vector4::new(-1.0, -10.0, 0.5, -0.01));
        let b = real_basis(&j, &[1.0; 4]).unwrap();
        let moduli: Vec<f64> = b.eigenvalues.iter().map(|l| l.re).collect();
        assert_eq!(moduli, vec![-10.0, -1.0, 0.5, -0.01]);
        assert!((b.beta * b.alpha - Matrix4::identity()).abs().max() < 1e-14);
        assert!((b.alpha[(1, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rotation_block_gives_pair() {
        let mut j = Matrix4::zeros();
        j[(0, 0)] = -1.0;
        j[(0, 1)] = 2.0;
        j[(1, 0)] = -2.0;
        j[(1, 1)] = -1.0;
        j[(2, 2)] = -5.0;
        j[(3, 3)] = -0.1;
        let b = real_basis(&j, &[1.0; 4]).unwrap();
        assert_eq!(b.eigenvalues[0], Complex64::new(-5.0, 0.0));
        assert_eq!(b.complex_pair[1], Some(2));
        assert_eq!(b.complex_pair[2], Some(1));
        assert!((b.eigenvalues[1] - Complex64::new(-1.0, 2.0)).norm() < 1e-12);
        // real-basis block: beta J alpha has diagonal entries Re(lambda)
        let block = b.beta * j * b.alpha;
        assert!((block[(1, 1)] + 1.0).abs() < 1e-12);
        assert!((block[(2, 2)] + 1.0).abs() < 1e-12);
        assert!((block[(1, 2)].abs() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn defective_matrix_rejected() {
        let mut j = Matrix4::from_diagonal(&Vector4::new(-1.0, -1.0, -2.0, -3.0));
        j[(0, 1)] = 1.0;
        assert!(matches!(real_basis(&j, &[1.0; 4]), Err(Error::Defective(_))));
    }
}
