//! Monte Carlo workbench for covariate-adaptive experimental design.
//!
//! Simulates datasets ([`dgp`]), assigns treatment by complete
//! randomization, rerandomization or FSM acceptance sampling ([`designs`]),
//! measures balance and estimation error ([`metrics`]), sweeps the FSM
//! threshold ([`engine`]), picks it by sample-split MSE minimization
//! ([`selection`]) and checks the Monte Carlo machinery against exact
//! enumeration on small instances ([`oracle`]).

pub mod cli;
pub mod config;
pub mod designs;
pub mod dgp;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod oracle;
pub mod seed;
pub mod selection;
pub mod study;
pub mod table;

pub use config::RunConfig;
pub use designs::{Allocation, Assignment, AssignmentOutcome, DesignKind, DesignSpec};
pub use dgp::{Covariates, Sample, ScenarioKind, ScenarioSpec};
pub use engine::{CurvePoint, GridSpec, ReplicationRecord, Split};
pub use error::{Error, Result};
pub use selection::{SelectionResult, SelectionRule, SplitPlan};
