use serde::{Deserialize, Serialize};

use super::{continue_from, integrate, IntegratorConfig, OutputGrid};
use crate::equilibria::{find_hte, tfe, EquilibriumKind, HteSearch};
use crate::error::{Error, Result};
use crate::kinetics::{ParameterSet, State};

/// Relative distance below which a final state counts as converged.
pub const ATTRACTOR_TOL: f64 = 1e-2;

/// A stable equilibrium used as a classification target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attractor {
    pub kind: EquilibriumKind,
    pub state: [f64; 4],
}

/// Stable tumor-free and high-tumor equilibria of a parameter set.
pub fn stable_attractors(params: &ParameterSet) -> Result<Vec<Attractor>> {
    let mut out = Vec::new();
    let (e0, _) = tfe(params);
    if e0.stable {
        out.push(Attractor { kind: e0.kind, state: e0.to_array() });
    }
    for eq in find_hte(params, &HteSearch::default())? {
        if eq.stable {
            out.push(Attractor { kind: eq.kind, state: eq.to_array() });
        }
    }
    Ok(out)
}

/// `max_i |y_i - y*_i| / max(|y*_i|, 1)`.
pub fn relative_distance(y: &[f64; 4], target: &[f64; 4]) -> f64 {
    (0..4)
        .map(|i| (y[i] - target[i]).abs() / target[i].abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Index of the attractor within [`ATTRACTOR_TOL`] of `y`, if any.
pub fn classify_state(y: &[f64; 4], attractors: &[Attractor]) -> Option<usize> {
    attractors
        .iter()
        .enumerate()
        .map(|(i, a)| (i, relative_distance(y, &a.state)))
        .filter(|(_, d)| *d < ATTRACTOR_TOL)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

/// Attractor reached from `y0`, integrating a further `2 t_end` if the
/// state at `t_end` is not yet within tolerance.
pub(crate) fn classify_run(y0: &State, params: &ParameterSet, config: &IntegratorConfig, attractors: &[Attractor]) -> Result<Attractor> {
    let cfg = config.clone().with_grid(OutputGrid::EndOnly);
    let first = integrate(y0, params, &cfg)?.final_state();
    if let Some(i) = classify_state(&first.to_array(), attractors) {
        return Ok(attractors[i]);
    }
    let extended = continue_from(&first, params, &cfg.clone().with_t_end(first.t + 2.0 * config.t_end))?.final_state();
    classify_state(&extended.to_array(), attractors)
        .map(|i| attractors[i])
        .ok_or_else(|| Error::Unclassified(format!("T(0) = {} ends at {:?}", y0.tumor, extended.to_array())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasinThreshold {
    /// Smallest integer `T(0)` found to reach `above`; `threshold - 1` reaches `below`.
    pub threshold: f64,
    pub below: EquilibriumKind,
    pub above: EquilibriumKind,
    pub runs: usize,
}

/// Bisects on `T(0)` to one-cell resolution between two attractors.
pub fn basin_threshold(
    nk0: f64,
    cd8_0: f64,
    circulating0: f64,
    params: &ParameterSet,
    bracket: (f64, f64),
    config: &IntegratorConfig,
) -> Result<BasinThreshold> {
    let (lo, hi) = (bracket.0.round(), bracket.1.round());
    if !(lo >= 1.0 && hi > lo) {
        return Err(Error::Config(format!("bracket {bracket:?} must satisfy 1 <= low < high")));
    }
    let attractors = stable_attractors(params)?;
    let run = |tumor: f64| classify_run(&State::new(tumor, nk0, cd8_0, circulating0), params, config, &attractors);
    let (below, above) = rayon::join(|| run(lo), || run(hi));
    let (below, above) = (below?, above?);
    if below.kind == above.kind && below.state == above.state {
        return Err(Error::SameAttractor(below.kind.to_string()));
    }
    let (mut a, mut b) = (lo, hi);
    let mut runs = 2;
    while b - a > 1.0 {
        let mid = ((a + b) / 2.0).floor();
        let reached = run(mid)?;
        runs += 1;
        if reached.state == below.state {
            a = mid;
        } else if reached.state == above.state {
            b = mid;
        } else {
            return Err(Error::Unclassified(format!("T(0) = {mid} reaches a third attractor")));
        }
    }
    Ok(BasinThreshold { threshold: b, below: below.kind, above: above.kind, runs })
}
