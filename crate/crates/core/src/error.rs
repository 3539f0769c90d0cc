use std::path::PathBuf;

use crate::problem::ConstraintReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("slot index {index} out of range 1..={len}")]
    Index { index: usize, len: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("scenario is infeasible: {}", .0.summary())]
    Infeasible(Box<ConstraintReport<f64>>),

    #[error(
        "cost is not guaranteed convex: a*b1 + b2 = {margin} < 0 \
         (convexity requires thermal inertia -b2 <= a*b1)"
    )]
    NonConvex { margin: f64 },

    #[error("energy constraint not active at optimum: EV {ev} slack {slack_kwh} kWh")]
    EnergyNotActive { ev: usize, slack_kwh: f64 },

    #[error("solver did not converge after {iters} iterations (residual {residual:e})")]
    NotConverged { iters: usize, residual: f64 },

    #[error("allocation infeasible: max flow falls {gap_kwh} kWh short of total demand")]
    AllocationInfeasible { gap_kwh: f64 },

    #[error(
        "EV {ev} cannot receive {demand_kwh} kWh: at most {reachable_kwh} kWh fit in the horizon"
    )]
    EvInfeasible {
        ev: usize,
        demand_kwh: f64,
        reachable_kwh: f64,
    },

    #[error("best response of EV {ev} failed: {source}")]
    BestResponse {
        ev: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid {what}: {reason}")]
    Validation { what: String, reason: String },

    #[error("{}:{line}: {reason}", .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            what: what.into(),
            reason: reason.into(),
        }
    }

    /// Innermost error, looking through best-response and sweep-cell wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::BestResponse { source, .. } | Error::Cell { source, .. } => source.root(),
            e => e,
        }
    }
}
