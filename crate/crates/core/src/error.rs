use thiserror::Error;

use crate::integrator::Trajectory;

/// Errors raised by the model, solvers and report writers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("state outside the model domain: {0}")]
    Domain(String),

    #[error("invalid parameter set: {0}")]
    Parameter(String),

    #[error("process index {0} outside 1..=15")]
    ProcessIndex(usize),

    #[error("denominator of N*(T*) is nonpositive at T* = {0}")]
    InfeasibleBranch(f64),

    #[error("integration failed at t = {t}: {message}")]
    Integration {
        t: f64,
        message: String,
        partial: Box<Trajectory>,
    },

    #[error("time {t} outside trajectory span [{start}, {end}]")]
    OutOfSpan { t: f64, start: f64, end: f64 },

    #[error("eigenvector matrix is near-defective (condition number {0:.3e})")]
    Defective(f64),

    #[error("diagnostic table undefined: {0}")]
    UndefinedTable(String),

    #[error("consistency check failed: {0}")]
    Consistency(String),

    #[error("bracket endpoints reach the same attractor ({0})")]
    SameAttractor(String),

    #[error("attractor not reached: {0}")]
    Unclassified(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
