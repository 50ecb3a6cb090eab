//! Belief-state restless-bandit model of treatment adherence.
//!
//! Each patient is a two-state arm (adherent / nonadherent) observed only
//! through a belief. An intervention resets the belief; capacity limits how
//! many patients are treated per period. The crate provides closed-form
//! metrics for threshold policies, the Whittle (marginal productivity) index,
//! a Lagrangian dual bound and a Monte-Carlo policy simulator.

pub mod average;
pub mod dual;
pub mod dynamics;
pub mod error;
pub mod index;
pub mod metrics;
pub mod sensitivity;
pub mod sim;
pub mod study;
pub mod verify;

pub use dynamics::{Belief, CrossingTime, Horizon, PatientParams, Threshold};
pub use error::{ModelError, Result};
pub use index::{AffineBranch, IndexTable};
pub use metrics::{MetricPair, RegimeTag};
pub use verify::{CheckResult, GridSpec, ReachableSet, VerificationReport};
pub use average::AvgMetricPair;
pub use sensitivity::{BranchTag, MonotonicityReport, StepCheck, Trend};
pub use dual::{dual_bound, dual_derivative, dual_function, CohortInitial, DualMode, DualResult, Initial};
pub use sim::{relative_gap, select_actions, simulate, Cohort, InitialSampler, Policy, SimConfig, SimResult, Simulator};
pub use study::{
    build_instance_grid, run_study, summarize, GridConfig, InstanceSpec, Profile, ReportKind, StudyConfig, StudyRecord,
    Summary,
};
