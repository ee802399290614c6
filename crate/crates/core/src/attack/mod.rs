//! Scripted adversaries: list replay through a predicted address, log
//! audits for secrets, timing correlation of joins and relay origin
//! guessing.

mod audit;
mod relay;
mod replay;
mod timing;

pub use audit::{
    planted_leak_control, run_lifecycle_audit, secrecy_audit, LifecycleAudit, LifecycleConfig, PlantedLeakReport,
    SecrecyReport, Secret, Violation, PATTERN_LEN,
};
pub use relay::{relay_origin_guess, RelayStats};
pub use replay::{run_replay_attack, run_replay_scenario, AttackOutcome, EvidenceStep, ReplayScenario};
pub use timing::{correlate, timing_correlation_attack, Link, TimingConfig, TimingReport, WINDOW_QUANTILE};
