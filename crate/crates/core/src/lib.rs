//! Explicit finite-sample coupling thresholds for partial sums of bounded
//! i.i.d. variables.
//!
//! The crate computes conditional and marginal Wasserstein-p bounds between
//! bounded sums and their Gaussian counterparts, turns them into
//! time-uniform threshold schedules, and applies those schedules to
//! empirical-variance streams, online change-point detection and
//! first-hitting-time bounds. [`oracles`] holds brute-force references used
//! for validation.

pub mod changepoint;
pub mod empirical;
pub mod error;
pub mod hitting;
pub mod oracles;
pub mod scheduler;
pub mod special;
pub mod wasserstein;

pub use changepoint::{
    run_detection_experiment, BlockGrid, DetectionSummary, Detector, DetectorConfig, ExperimentConfig, ScanMode,
};
pub use empirical::{
    default_variance_cs, EmpiricalKind, EmpiricalPoint, EmpiricalThresholds, ScheduleCache, VarianceConfidenceSequence,
    VarianceInterval,
};
pub use error::{KmtError, Result};
pub use hitting::{
    hitting_bound, min_nontrivial_n, Boundary, CrossingConfig, CrossingEstimate, HittingBound, HittingSweep,
    HittingTimeProblem, MinNOutcome,
};
pub use scheduler::{
    build_bridge_schedule, build_sum_schedule, ScheduleKind, SplitSearchConfig, ThresholdSchedule, VariantConfig,
};
pub use wasserstein::{marginal_bound, omega_conditional, BoundSearchConfig, BoundedModel};
