//! Three-stage Radau IIA (order 5) with simplified Newton iterations, an
//! embedded error estimate and cubic collocation dense output.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

const NEWTON_MAXITER: usize = 6;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;

struct Tableau {
    c: [f64; 3],
    e: [f64; 3],
    mu_real: f64,
    mu_complex: Complex64,
    t: [[f64; 3]; 3],
    ti: [[f64; 3]; 3],
    p: [[f64; 3]; 3],
}

fn tableau() -> Tableau {
    let s6 = 6f64.sqrt();
    let c3 = 3f64.powf(1.0 / 3.0);
    let c23 = 3f64.powf(2.0 / 3.0);
    Tableau {
        c: [(4.0 - s6) / 10.0, (4.0 + s6) / 10.0, 1.0],
        e: [(-13.0 - 7.0 * s6) / 3.0, (-13.0 + 7.0 * s6) / 3.0, -1.0 / 3.0],
        mu_real: 3.0 + c23 - c3,
        mu_complex: Complex64::new(
            3.0 + 0.5 * (c3 - c23),
            -0.5 * (3f64.powf(5.0 / 6.0) + 3f64.powf(7.0 / 6.0)),
        ),
        t: [
            [0.09443876248897524, -0.14125529502095421, 0.03002919410514742],
            [0.25021312296533332, 0.20412935229379994, -0.38294211275726192],
            [1.0, 1.0, 0.0],
        ],
        ti: [
            [4.17871859155190428, 0.32768282076106237, 0.52337644549944951],
            [-4.17871859155190428, -0.32768282076106237, 0.47662355450055044],
            [0.50287263494578682, -2.57192694985560522, 0.59603920482822492],
        ],
        p: [
            [13.0 / 3.0 + 7.0 * s6 / 3.0, -23.0 / 3.0 - 22.0 * s6 / 3.0, 10.0 / 3.0 + 5.0 * s6],
            [13.0 / 3.0 - 7.0 * s6 / 3.0, -23.0 / 3.0 + 22.0 * s6 / 3.0, 10.0 / 3.0 - 5.0 * s6],
            [1.0 / 3.0, -8.0 / 3.0, 10.0 / 3.0],
        ],
    }
}

/// Autonomous or non-autonomous ODE `y' = f(t, y)` with a user Jacobian.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, t: f64, y: &DVector<f64>) -> DMatrix<f64>;
}

/// One accepted step with its cubic interpolant `y_old + Q [x, x^2, x^3]`,
/// `x = (t - t_old) / (t_new - t_old)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub t_old: f64,
    pub t_new: f64,
    pub y_old: Vec<f64>,
    pub q: Vec<[f64; 3]>,
}

impl Segment {
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let x = (t - self.t_old) / (self.t_new - self.t_old);
        let powers = [x, x * x, x * x * x];
        self.y_old
            .iter()
            .zip(&self.q)
            .map(|(y, q)| y + q[0] * powers[0] + q[1] * powers[1] + q[2] * powers[2])
            .collect()
    }
}

/// Counters reported with every trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SolverStats {
    pub steps: usize,
    pub rejected_steps: usize,
    pub rhs_evaluations: usize,
    pub jacobian_evaluations: usize,
    pub lu_decompositions: usize,
}

#[derive(Debug, Clone)]
pub struct Failure {
    pub t: f64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Settings<'a> {
    pub rtol: f64,
    pub atol: &'a [f64],
    pub max_step: f64,
}

fn rms(v: &DVector<f64>, scale: &DVector<f64>) -> f64 {
    let n = v.len() as f64;
    (v.iter().zip(scale.iter()).map(|(a, s)| (a / s) * (a / s)).sum::<f64>() / n).sqrt()
}

struct Lus {
    real: nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    complex: nalgebra::linalg::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
}

fn factorize(tab: &Tableau, h: f64, jac: &DMatrix<f64>) -> Lus {
    let n = jac.nrows();
    let real = DMatrix::<f64>::identity(n, n) * (tab.mu_real / h) - jac;
    let mu = tab.mu_complex / h;
    let complex = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
        let diag = if i == j { mu } else { Complex64::new(0.0, 0.0) };
        diag - Complex64::new(jac[(i, j)], 0.0)
    });
    Lus { real: real.lu(), complex: complex.lu() }
}

struct Newton {
    converged: bool,
    iterations: usize,
    z: [DVector<f64>; 3],
    rate: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn solve_collocation<S: OdeSystem + ?Sized>(
    tab: &Tableau,
    sys: &S,
    t: f64,
    y: &DVector<f64>,
    h: f64,
    z0: [DVector<f64>; 3],
    scale: &DVector<f64>,
    tol: f64,
    lus: &Lus,
    stats: &mut SolverStats,
) -> Newton {
    let n = y.len();
    let m_real = tab.mu_real / h;
    let m_complex = tab.mu_complex / h;
    let mut z = z0;
    let mut w: [DVector<f64>; 3] = std::array::from_fn(|i| {
        &z[0] * tab.ti[i][0] + &z[1] * tab.ti[i][1] + &z[2] * tab.ti[i][2]
    });
    let mut dw_norm_old: Option<f64> = None;
    let mut rate: Option<f64> = None;
    let mut iterations = 0;

    for k in 0..NEWTON_MAXITER {
        iterations = k + 1;
        let f: [DVector<f64>; 3] = std::array::from_fn(|i| sys.rhs(t + h * tab.c[i], &(y + &z[i])));
        stats.rhs_evaluations += 3;
        if f.iter().any(|fi| fi.iter().any(|v| !v.is_finite())) {
            break;
        }
        let f_real = (&f[0] * tab.ti[0][0] + &f[1] * tab.ti[0][1] + &f[2] * tab.ti[0][2]) - &w[0] * m_real;
        let f_complex = DVector::<Complex64>::from_fn(n, |i, _| {
            let tc = [
                Complex64::new(tab.ti[1][0], tab.ti[2][0]),
                Complex64::new(tab.ti[1][1], tab.ti[2][1]),
                Complex64::new(tab.ti[1][2], tab.ti[2][2]),
            ];
            tc[0] * f[0][i] + tc[1] * f[1][i] + tc[2] * f[2][i] - m_complex * Complex64::new(w[1][i], w[2][i])
        });
        let (Some(dw_real), Some(dw_complex)) = (lus.real.solve(&f_real), lus.complex.solve(&f_complex)) else {
            break;
        };
        let dw = [
            dw_real,
            dw_complex.map(|c| c.re),
            dw_complex.map(|c| c.im),
        ];
        let stacked_sq: f64 = dw
            .iter()
            .map(|d| d.iter().zip(scale.iter()).map(|(a, s)| (a / s) * (a / s)).sum::<f64>())
            .sum();
        let dw_norm = (stacked_sq / (3 * n) as f64).sqrt();
        if let Some(old) = dw_norm_old {
            rate = Some(dw_norm / old);
        }
        if let Some(r) = rate {
            if r >= 1.0 || r.powi((NEWTON_MAXITER - k) as i32) / (1.0 - r) * dw_norm > tol {
                break;
            }
        }
        for i in 0..3 {
            w[i] += &dw[i];
        }
        z = std::array::from_fn(|i| &w[0] * tab.t[i][0] + &w[1] * tab.t[i][1] + &w[2] * tab.t[i][2]);
        if dw_norm == 0.0 || rate.is_some_and(|r| r / (1.0 - r) * dw_norm < tol) {
            return Newton { converged: true, iterations, z, rate };
        }
        dw_norm_old = Some(dw_norm);
    }
    Newton { converged: false, iterations, z, rate }
}

fn predict_factor(h_abs: f64, h_abs_old: Option<f64>, err: f64, err_old: Option<f64>) -> f64 {
    let multiplier = match (h_abs_old, err_old) {
        (Some(h_old), Some(e_old)) if err != 0.0 => h_abs / h_old * (e_old / err).powf(0.25),
        _ => 1.0,
    };
    multiplier.min(1.0) * err.powf(-0.25)
}

fn initial_step<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &DVector<f64>,
    f0: &DVector<f64>,
    t_bound: f64,
    settings: &Settings,
    stats: &mut SolverStats,
) -> f64 {
    let interval = (t_bound - t0).abs();
    if interval == 0.0 {
        return 0.0;
    }
    let scale = DVector::from_fn(y0.len(), |i, _| settings.atol[i] + y0[i].abs() * settings.rtol);
    let d0 = rms(y0, &scale);
    let d1 = rms(f0, &scale);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 }.min(interval);
    let y1 = y0 + f0 * h0;
    let f1 = sys.rhs(t0 + h0, &y1);
    stats.rhs_evaluations += 1;
    let d2 = rms(&(f1 - f0), &scale) / h0;
    let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 4.0)
    };
    (100.0 * h0).min(h1).min(interval).min(settings.max_step)
}

/// Integrates from `t0` to `t_bound`. `accept` is called with each accepted
/// step's end state and may modify it (clipping) or veto the step.
pub fn solve<S, A>(
    sys: &S,
    t0: f64,
    y0: DVector<f64>,
    t_bound: f64,
    settings: &Settings,
    mut accept: A,
) -> (Vec<Segment>, SolverStats, Option<Failure>)
where
    S: OdeSystem + ?Sized,
    A: FnMut(f64, &mut DVector<f64>) -> Result<(), String>,
{
    let tab = tableau();
    let n = y0.len();
    let rtol = settings.rtol;
    let atol = DVector::from_column_slice(settings.atol);
    let newton_tol = (10.0 * f64::EPSILON / rtol).max(0.03f64.min(rtol.sqrt()));
    let mut stats = SolverStats::default();
    let mut segments: Vec<Segment> = Vec::new();

    let mut t = t0;
    let mut y = y0;
    let mut f = sys.rhs(t, &y);
    stats.rhs_evaluations += 1;
    let mut h_abs = initial_step(sys, t, &y, &f, t_bound, settings, &mut stats);
    let mut h_abs_old: Option<f64> = None;
    let mut err_old: Option<f64> = None;
    let mut jac = sys.jacobian(t, &y);
    stats.jacobian_evaluations += 1;
    let mut current_jac = true;
    let mut lus: Option<Lus> = None;

    while t < t_bound {
        let min_step = 10.0 * ((t.abs() * f64::EPSILON).max(f64::MIN_POSITIVE));
        let (mut h_try, mut h_old_try, mut err_old_try) = (h_abs, h_abs_old, err_old);
        if h_try > settings.max_step {
            h_try = settings.max_step;
            h_old_try = None;
            err_old_try = None;
        } else if h_try < min_step {
            h_try = min_step;
            h_old_try = None;
            err_old_try = None;
        }

        let mut rejected = false;
        let accepted = loop {
            if h_try < min_step {
                return (segments, stats, Some(Failure { t, message: "step size collapsed below round-off".into() }));
            }
            let mut t_new = t + h_try;
            if t_new > t_bound {
                t_new = t_bound;
            }
            let h = t_new - t;
            h_try = h.abs();

            let z0: [DVector<f64>; 3] = match segments.last() {
                None => std::array::from_fn(|_| DVector::zeros(n)),
                Some(seg) => std::array::from_fn(|i| DVector::from_vec(seg.eval(t + h * tab.c[i])) - &y),
            };
            let scale = DVector::from_fn(n, |i, _| atol[i] + y[i].abs() * rtol);

            let newton = loop {
                let l = match lus.take() {
                    Some(l) => l,
                    None => {
                        stats.lu_decompositions += 2;
                        factorize(&tab, h, &jac)
                    }
                };
                let result = solve_collocation(&tab, sys, t, &y, h, z0.clone(), &scale, newton_tol, &l, &mut stats);
                lus = Some(l);
                if result.converged || current_jac {
                    break result;
                }
                jac = sys.jacobian(t, &y);
                stats.jacobian_evaluations += 1;
                current_jac = true;
                lus = None;
            };
            if !newton.converged {
                h_try *= 0.5;
                lus = None;
                continue;
            }

            let l = lus.as_ref().expect("factorization present after Newton");
            let y_new = &y + &newton.z[2];
            let ze = (&newton.z[0] * tab.e[0] + &newton.z[1] * tab.e[1] + &newton.z[2] * tab.e[2]) / h;
            let mut error = l.real.solve(&(&f + &ze)).unwrap_or_else(|| DVector::from_element(n, f64::INFINITY));
            let scale = DVector::from_fn(n, |i, _| atol[i] + y[i].abs().max(y_new[i].abs()) * rtol);
            let mut err_norm = rms(&error, &scale);
            let safety = 0.9 * (2 * NEWTON_MAXITER + 1) as f64 / (2 * NEWTON_MAXITER + newton.iterations) as f64;
            if rejected && err_norm > 1.0 {
                let f_err = sys.rhs(t, &(&y + &error));
                stats.rhs_evaluations += 1;
                error = l.real.solve(&(f_err + &ze)).unwrap_or_else(|| DVector::from_element(n, f64::INFINITY));
                err_norm = rms(&error, &scale);
            }
            if !(err_norm <= 1.0) {
                let factor = if err_norm.is_finite() {
                    predict_factor(h_try, h_old_try, err_norm, err_old_try)
                } else {
                    MIN_FACTOR
                };
                h_try *= MIN_FACTOR.max(safety * factor);
                lus = None;
                rejected = true;
                stats.rejected_steps += 1;
                continue;
            }
            break (t_new, h, y_new, newton, err_norm, safety);
        };

        let (t_new, h, mut y_new, newton, err_norm, safety) = accepted;
        let recompute_jac = newton.iterations > 2 && newton.rate.is_some_and(|r| r > 1e-3);
        let mut factor = MAX_FACTOR.min(safety * predict_factor(h_try, h_old_try, err_norm, err_old_try));
        if !recompute_jac && factor < 1.2 {
            factor = 1.0;
        } else {
            lus = None;
        }

        let q: Vec<[f64; 3]> = (0..n)
            .map(|i| {
                std::array::from_fn(|c| (0..3).map(|s| newton.z[s][i] * tab.p[s][c]).sum())
            })
            .collect();
        segments.push(Segment { t_old: t, t_new, y_old: y.iter().copied().collect(), q });
        stats.steps += 1;

        if let Err(message) = accept(t_new, &mut y_new) {
            return (segments, stats, Some(Failure { t: t_new, message }));
        }

        f = sys.rhs(t_new, &y_new);
        stats.rhs_evaluations += 1;
        if recompute_jac {
            jac = sys.jacobian(t_new, &y_new);
            stats.jacobian_evaluations += 1;
            current_jac = true;
        } else {
            current_jac = false;
        }
        h_abs_old = Some(h_abs);
        err_old = Some(err_norm);
        h_abs = h_try * factor;
        let _ = h;
        t = t_new;
        y = y_new;
    }
    (segments, stats, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay {
        rate: f64,
    }

    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &DVector<f64>) -> DVector<f64> {
            y * (-self.rate)
        }
        fn jacobian(&self, _t: f64, _y: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, -self.rate)
        }
    }

    struct Oscillator;

    impl OdeSystem for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &DVector<f64>) -> DVector<f64> {
            DVector::from_vec(vec![y[1], -y[0]])
        }
        fn jacobian(&self, _t: f64, _y: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
        }
    }

    struct Robertson;

    impl OdeSystem for Robertson {
        fn dim(&self) -> usize {
            3
        }
        fn rhs(&self, _t: f64, y: &DVector<f64>) -> DVector<f64> {
            let a = -0.04 * y[0] + 1e4 * y[1] * y[2];
            let c = 3e7 * y[1] * y[1];
            DVector::from_vec(vec![a, -a - c, c])
        }
        fn jacobian(&self, _t: f64, y: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_row_slice(
                3,
                3,
                &[
                    -0.04,
                    1e4 * y[2],
                    1e4 * y[1],
                    0.04,
                    -1e4 * y[2] - 6e7 * y[1],
                    -1e4 * y[1],
                    0.0,
                    6e7 * y[1],
                    0.0,
                ],
            )
        }
    }

    fn run<S: OdeSystem>(sys: &S, y0: Vec<f64>, t_end: f64, rtol: f64, atol: f64) -> (Vec<Segment>, SolverStats) {
        let atol = vec![atol; y0.len()];
        let settings = Settings { rtol, atol: &atol, max_step: f64::INFINITY };
        let (segs, stats, fail) = solve(sys, 0.0, DVector::from_vec(y0), t_end, &settings, |_, _| Ok(()));
        assert!(fail.is_none());
        (segs, stats)
    }

    #[test]
    fn tableau_constants_consistent() {
        let tab = tableau();
        for i in 0..3 {
            for j in 0..3 {
                let prod: f64 = (0..3).map(|k| tab.t[i][k] * tab.ti[k][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((prod - expected).abs() < 1e-14, "T*TI[{i}][{j}] = {prod}");
            }
        }
        // Dense output at x = 1 reproduces the last stage: rows of P sum to 1 for the last stage.
        let p_sum: Vec<f64> = (0..3).map(|s| tab.p[s].iter().sum()).collect();
        assert!((p_sum[2] - 1.0).abs() < 1e-14);
        assert!(p_sum[0].abs() < 1e-13 && p_sum[1].abs() < 1e-13);
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let (segs, stats) = run(&Decay { rate: 2.0 }, vec![1.0], 5.0, 1e-10, 1e-14);
        let last = segs.last().unwrap();
        let y_end = last.eval(last.t_new)[0];
        assert!((y_end - (-10f64).exp()).abs() < 1e-12);
        for seg in &segs {
            let tm = 0.5 * (seg.t_old + seg.t_new);
            assert!((seg.eval(tm)[0] - (-2.0 * tm).exp()).abs() < 1e-9);
        }
        assert!(stats.steps > 5);
    }

    #[test]
    fn oscillator_keeps_phase() {
        let (segs, _) = run(&Oscillator, vec![1.0, 0.0], 20.0, 1e-10, 1e-12);
        let last = segs.last().unwrap();
        let y = last.eval(20.0);
        assert!((y[0] - 20f64.cos()).abs() < 1e-7);
        assert!((y[1] + 20f64.sin()).abs() < 1e-7);
    }

    #[test]
    fn robertson_stiff_problem() {
        let (segs, stats) = run(&Robertson, vec![1.0, 0.0, 0.0], 40.0, 1e-8, 1e-12);
        let y = segs.last().unwrap().eval(40.0);
        // Published reference values of this classic stiff test at t = 40.
        assert!((y[0] - 0.7158270687).abs() < 1e-7);
        assert!((y[1] - 9.185534764e-6).abs() < 1e-11);
        assert!((y[0] + y[1] + y[2] - 1.0).abs() < 1e-8);
        assert!(stats.steps < 2000);
    }

    #[test]
    fn veto_stops_integration() {
        let atol = [1e-8];
        let settings = Settings { rtol: 1e-8, atol: &atol, max_step: f64::INFINITY };
        let (_, _, fail) = solve(&Decay { rate: 1.0 }, 0.0, DVector::from_vec(vec![1.0]), 10.0, &settings, |t, _| {
            if t > 1.0 {
                Err("stop".into())
            } else {
                Ok(())
            }
        });
        let fail = fail.unwrap();
        assert!(fail.t > 1.0);
        assert_eq!(fail.message, "stop");
    }
}
