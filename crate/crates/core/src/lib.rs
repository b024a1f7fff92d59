//! Four-population tumor-immune kinetics: stiff integration, equilibria and
//! bifurcations, timescale (CSP) diagnostics and reduced models.

pub mod cli;
pub mod csp;
pub mod eigen;
pub mod equilibria;
pub mod error;
pub mod harness;
pub mod integrator;
pub mod kinetics;
pub mod output;
pub mod reduction;

pub use error::{Error, Result};
pub use kinetics::{Param, ParameterSet, State};
