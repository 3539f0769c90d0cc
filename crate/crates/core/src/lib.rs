//! Transformer-aware EV charging schedules.
//!
//! The core is generic over a [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix it to `f64`, which is what the harness and CLI use.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod central;
pub mod distributed;
pub mod error;
pub mod harness;
pub mod model;
pub mod problem;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use baselines::{pac_policy, uniform_policy, PacConfig};
pub use central::{allocate, solve_centralized, solve_sum_load, two_step_solve};
pub use distributed::{brd_run, BrdRule, TieBreak};
pub use harness::{evaluate, run_policy, Policy, PolicyMetrics, PolicyOptions};
pub use model::lifetime_years;
pub use problem::{check_convexity, check_feasibility, total_cost, MemorylessCost};

pub type ThermalParams = model::ThermalParams<f64>;
pub type AmbientSeries = model::AmbientSeries<f64>;
pub type LoadSeries = model::LoadSeries<f64>;
pub type JouleModel = model::JouleModel<f64>;
pub type Trace = model::StateTrace<f64>;
pub type Scenario = problem::Scenario<f64>;
pub type ChargingProfile = problem::ChargingProfile<f64>;
pub type CostBreakdown = problem::CostBreakdown<f64>;
pub type ConstraintReport = problem::ConstraintReport<f64>;
pub type SolveOptions = central::SolveOptions<f64>;
pub type SolveReport = central::SolveReport<f64>;
pub type BrdConfig = distributed::BrdConfig<f64>;
pub type BrdOutcome = distributed::BrdOutcome<f64>;
