use std::io::Write;

use serde::Serialize;

use super::scenario::{run_scenario, write_metrics, MetricsFormat, ScenarioConfig};
use super::{AttackCmd, AuditCmd, Cli, CliError, SimCmd};
use crate::attack::{relay_origin_guess, run_lifecycle_audit, run_replay_attack, timing_correlation_attack, LifecycleConfig, TimingConfig};

fn json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

pub(super) fn sim(cli: &Cli, cmd: &SimCmd, out: &mut dyn Write) -> Result<(), CliError> {
    let SimCmd::Run { duration_hours, join_mean_min, wall_mean_min, admin_poll_min, out: metrics } = cmd;
    let cfg = ScenarioConfig {
        seed: cli.seed,
        duration_hours: *duration_hours,
        join_mean_min: *join_mean_min,
        wall_mean_min: *wall_mean_min,
        admin_poll_min: *admin_poll_min,
        put_capacity: cli.capacity,
        replication: cli.replication,
        ..ScenarioConfig::default()
    };
    let run = run_scenario(&cfg)?;
    if let Some(path) = metrics {
        let file = std::fs::File::create(path)?;
        write_metrics(&run.records, MetricsFormat::from_path(path), file)?;
    }
    json(out, &run.summary)
}

pub(super) fn attack(cli: &Cli, cmd: &AttackCmd, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        AttackCmd::Replay { no_predicted, .. } => json(out, &run_replay_attack(cli.seed, !no_predicted)?),
        AttackCmd::Timing { coverage, groups, joins } => {
            let cfg = TimingConfig { seed: cli.seed, coverage: *coverage, groups: *groups, joins: *joins, ..TimingConfig::default() };
            json(out, &timing_correlation_attack(&cfg)?)
        }
        AttackCmd::Relay { pf, trials } => json(out, &relay_origin_guess(cli.seed, *pf, *trials)?),
    }
}

#[derive(Serialize)]
struct SecrecySummary {
    secrets: usize,
    observations: usize,
    bytes: usize,
    violations: usize,
    non_group_violations: usize,
    planted: usize,
    detected: usize,
}

pub(super) fn audit(cli: &Cli, cmd: &AuditCmd, out: &mut dyn Write) -> Result<(), CliError> {
    let AuditCmd::Secrecy { joins, wall_ops, messages, bans } = cmd;
    let cfg = LifecycleConfig {
        seed: cli.seed,
        joins: *joins,
        wall_ops: *wall_ops,
        private_messages: *messages,
        bans: *bans,
        ..LifecycleConfig::default()
    };
    let audit = run_lifecycle_audit(&cfg)?;
    let summary = SecrecySummary {
        secrets: audit.all_addresses.secrets_checked,
        observations: audit.all_addresses.observations_scanned,
        bytes: audit.all_addresses.bytes_scanned,
        violations: audit.all_addresses.violations.len(),
        non_group_violations: audit.non_group_addresses.violations.len(),
        planted: audit.planted.planted,
        detected: audit.planted.detected,
    };
    json(out, &summary)?;
    for v in &audit.all_addresses.violations {
        writeln!(out, "violation {v:?}")?;
    }
    if summary.violations > 0 || summary.detected < summary.planted {
        return Err(CliError::Integrity(format!(
            "secrecy audit failed: {} violations, {}/{} planted leaks detected",
            summary.violations, summary.detected, summary.planted
        )));
    }
    Ok(())
}
