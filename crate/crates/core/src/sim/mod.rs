//! Deterministic scenario execution: one seeded ChaCha stream drives all
//! channel noise, agents update in ascending order, and every step follows
//! the same sequence (noise, attacks, local views, detectors, trust,
//! control, record, RK4 propagation).

use thiserror::Error;

use crate::attack::AttackError;
use crate::dynamics::DynamicsError;
use crate::graph::GraphError;
use crate::stats::StatsError;

pub mod calibrate;
pub mod engine;
pub mod metrics;
pub mod scenario;
pub mod summary;
pub mod trace;

pub use calibrate::{calibrate_thresholds, Calibration};
pub use engine::{run_with, Observer, RunOutcome, StepRecord};
pub use scenario::{GainsSpec, Scenario, Thresholds};
pub use summary::Summary;
pub use trace::{run_scenario, Trace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("detector thresholds are required to run")]
    MissingThresholds,
    #[error("thresholds: {0}")]
    Thresholds(String),
    #[error("calibration needs an attack-free scenario")]
    RefusesAttackScenario,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}
