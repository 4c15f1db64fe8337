//! Deterministic plant and supply-chain simulator driving the whole stack.
//!
//! Each company runs its own MES bus, archive, gateway and connector. A
//! single-threaded event loop on one logical clock moves every order through
//! submit, assignment, setup, acquisition, evaluation, storage, KPI
//! translation and report, and hands evidence across company boundaries
//! through the usage-controlled exchange.

pub mod acquire;
pub mod config;
mod engine;
pub mod report;
pub mod trace;

use thiserror::Error;

pub use acquire::{acquire, evaluate, evaluate_batch, DefectSpot, EvalError, NoiseModel, Setup};
pub use config::{
    CellSpec, CompanyConfig, FaultKind, OrderPlan, Role, ScenarioConfig, SovereigntyConfig, StationConfig,
};
pub use engine::run_scenario;
pub use report::{CompanyOutcome, OrderOutcome, Report, RunOutput};
pub use trace::{Trace, TraceEvent, TraceKind};

/// Size of the attachment the oversize fault puts on the first order.
pub const OVERSIZE_ATTACHMENT: usize = 17 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    ConfigInvalid(String),
    #[error("fault {fault:?} does not apply: {reason}")]
    FaultNotApplicable { fault: FaultKind, reason: String },
    #[error("scenario deadlock: {}", .blocked.join("; "))]
    ScenarioDeadlock {
        blocked: Vec<String>,
        partial: Box<RunOutput>,
    },
    #[error("simulation runtime failure: {0}")]
    Runtime(String),
}
