//! Scenario configuration, the mission engine and experiment plumbing.

pub mod calibration;
pub mod config;
pub mod engine;
pub mod experiment;
pub mod metrics;
pub mod traces;

pub use config::{Mode, ScenarioConfig};
pub use engine::{simulate, RunOptions, RunOutput};
pub use metrics::{DetectionOutcome, MetricsRow, RunStats};
