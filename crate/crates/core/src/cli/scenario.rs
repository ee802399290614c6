//! Simulated-time workload: one public group, Poisson join arrivals
//! accepted by an administrator bot, and one member reading and appending
//! to the wall.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::dht::{LatencyModel, Requester, Session, SimConfig, SimTime, Simulator};
use crate::protocol::{
    complete_join, create_group, create_principal, process_joins, read_member_list, read_wall, request_join,
    sealed_chunk_count, write_wall, GroupPolicy, JoinDecision, PrincipalIdentity, ProtocolError, Result,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration_hours: f64,
    pub join_mean_min: f64,
    pub wall_mean_min: f64,
    /// How often the administrator bot fetches the group inbox.
    pub admin_poll_min: f64,
    /// Bytes appended by each wall write.
    pub wall_append_bytes: usize,
    pub latency: LatencyModel,
    pub put_capacity: usize,
    pub replication: u32,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            duration_hours: 63.0,
            join_mean_min: 20.0,
            wall_mean_min: 30.0,
            admin_poll_min: 1.0,
            wall_append_bytes: 32,
            latency: LatencyModel::default(),
            put_capacity: 512,
            replication: 19,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.duration_hours) {
            return Err(ProtocolError::Precondition("duration must be positive".into()));
        }
        if !positive(self.join_mean_min) || !positive(self.wall_mean_min) || !positive(self.admin_poll_min) {
            return Err(ProtocolError::Precondition("interarrival means and poll interval must be positive".into()));
        }
        self.sim_config().validate().map_err(ProtocolError::Precondition)
    }

    fn sim_config(&self) -> SimConfig {
        SimConfig {
            latency: self.latency.clone(),
            put_capacity: self.put_capacity,
            replication: self.replication,
            ..SimConfig::with_seed(self.seed)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpKind {
    Create,
    JoinProcess,
    WallRead,
    WallWrite,
}

/// One completed protocol operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub op: OpKind,
    pub start_s: f64,
    pub latency_s: f64,
    /// Chunks of the structure the operation worked on, after it.
    pub chunks: usize,
    pub outcome: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub join_arrivals: usize,
    /// Arrivals that ended with the principal holding a member view.
    pub joins_completed: usize,
    /// Requests sent again after a stale-ticket rejection.
    pub re_requests: usize,
    pub members: usize,
    pub list_counter: u64,
    pub list_chunks: usize,
    pub wall_bytes: usize,
    pub wall_chunks: usize,
    pub wall_reads: usize,
    pub wall_writes: usize,
    pub end_s: f64,
    pub dht_ops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub summary: ScenarioSummary,
    pub records: Vec<MetricsRecord>,
    /// Scheduled join arrival times.
    pub arrivals: Vec<SimTime>,
}

fn poisson_times<R: Rng>(mean_min: f64, horizon: SimTime, rng: &mut R) -> Vec<SimTime> {
    let exp = Exp::new(1.0 / (mean_min * 60.0)).expect("positive rate");
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        let at = SimTime::from_secs_f64(t);
        if at >= horizon {
            return out;
        }
        out.push(at);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    // Order breaks ties at equal times.
    Arrival(usize),
    Poll,
    MemberOp(usize),
}

struct Applicant {
    identity: PrincipalIdentity,
    client: Requester,
    done: bool,
}

const ADMIN: Requester = Requester::Client(1);
const MEMBER: Requester = Requester::Client(2);

fn record(op: OpKind, start: SimTime, end: SimTime, chunks: usize, outcome: impl Into<String>) -> MetricsRecord {
    MetricsRecord { op, start_s: start.secs_f64(), latency_s: end.since(start).secs_f64(), chunks, outcome: outcome.into() }
}

fn decision_name(d: &JoinDecision) -> &'static str {
    match d {
        JoinDecision::Accepted { .. } => "accepted",
        JoinDecision::AlreadyMember => "already_member",
        JoinDecision::RejectedStale { .. } => "rejected_stale",
        JoinDecision::RejectedInvalidTicket => "rejected_invalid_ticket",
        JoinDecision::RejectedByPolicy => "rejected_by_policy",
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun> {
    cfg.validate()?;
    let mut sim = Simulator::new(cfg.sim_config()).map_err(ProtocolError::Precondition)?;
    let mut workload = ChaCha20Rng::seed_from_u64(cfg.seed);
    workload.set_stream(1);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);

    let horizon = SimTime::from_secs_f64(cfg.duration_hours * 3600.0);
    let arrivals = poisson_times(cfg.join_mean_min, horizon, &mut workload);
    let member_ops = poisson_times(cfg.wall_mean_min, horizon, &mut workload);
    let poll = SimTime::from_secs_f64(cfg.admin_poll_min * 60.0);
    let mut events: Vec<(SimTime, Event)> = Vec::new();
    events.extend(arrivals.iter().enumerate().map(|(i, &t)| (t, Event::Arrival(i))));
    events.extend(member_ops.iter().enumerate().map(|(i, &t)| (t, Event::MemberOp(i))));
    events.extend((1..).map(|k| SimTime(poll.0 * k)).take_while(|t| *t < horizon).map(|t| (t, Event::Poll)));
    events.sort();

    let policy = GroupPolicy::open();
    let mut records = Vec::new();
    let mut summary = ScenarioSummary { join_arrivals: arrivals.len(), ..ScenarioSummary::default() };

    // Setup at time zero: the group and the member who uses the wall.
    let mut s = Session::new(&mut sim, SimTime::ZERO, ADMIN);
    let keys = create_group(&mut s, policy, "scenario", &mut rng)?;
    let list_chunks = read_member_list(&mut s, &keys.administrator_view(policy))?.chunks;
    records.push(record(OpKind::Create, SimTime::ZERO, s.now, list_chunks, "ok"));
    let mut admin = keys.administrator_view(policy);
    s.who = MEMBER;
    let mut member = create_principal(&mut s, None, &mut rng)?;
    request_join(&mut s, &mut member, &keys.root.public, &mut rng)?;
    s.who = ADMIN;
    for o in process_joins(&mut s, &mut admin, &mut rng)?.outcomes {
        records.push(record(OpKind::JoinProcess, o.started, o.finished, o.list_chunks, decision_name(&o.decision)));
    }
    s.who = MEMBER;
    let member_view = complete_join(&mut s, &mut member, &keys.root.public)?;

    let mut applicants: Vec<Applicant> = Vec::new();
    let mut wall_len = 0usize;
    for (t, ev) in events {
        match ev {
            Event::Arrival(i) => {
                let client = Requester::Client(1000 + i as u64);
                let mut s = Session::new(&mut sim, t, client);
                let mut identity = create_principal(&mut s, None, &mut rng)?;
                request_join(&mut s, &mut identity, &keys.root.public, &mut rng)?;
                applicants.push(Applicant { identity, client, done: false });
            }
            Event::Poll => {
                let mut s = Session::new(&mut sim, t, ADMIN);
                let batch = process_joins(&mut s, &mut admin, &mut rng)?;
                for o in batch.outcomes {
                    records.push(record(OpKind::JoinProcess, o.started, o.finished, o.list_chunks, decision_name(&o.decision)));
                    let Some(a) = applicants
                        .iter_mut()
                        .find(|a| a.identity.memberships.first().is_some_and(|m| m.join_inbox.public == o.join_inbox))
                    else {
                        continue;
                    };
                    s.who = a.client;
                    match o.decision {
                        JoinDecision::Accepted { .. } if !a.done => {
                            complete_join(&mut s, &mut a.identity, &keys.root.public)?;
                            a.done = true;
                            summary.joins_completed += 1;
                        }
                        JoinDecision::RejectedStale { .. } => {
                            // The applicant sees no helo and asks again with
                            // the refreshed ticket.
                            request_join(&mut s, &mut a.identity, &keys.root.public, &mut rng)?;
                            summary.re_requests += 1;
                        }
                        _ => {}
                    }
                    s.who = ADMIN;
                }
            }
            Event::MemberOp(_) => {
                let mut s = Session::new(&mut sim, t, MEMBER);
                let start = s.now;
                if workload.gen_bool(0.5) {
                    let current = read_wall(&mut s, &member_view)?;
                    let mut next = current;
                    next.extend((0..cfg.wall_append_bytes).map(|_| workload.gen_range(b'a'..=b'z')));
                    let chunks = write_wall(&mut s, &member_view, &next, &mut rng)?;
                    wall_len = next.len();
                    records.push(record(OpKind::WallWrite, start, s.now, chunks, "ok"));
                    summary.wall_writes += 1;
                } else {
                    let content = read_wall(&mut s, &member_view)?;
                    wall_len = content.len();
                    let chunks = sealed_chunk_count(content.len(), cfg.put_capacity);
                    records.push(record(OpKind::WallRead, start, s.now, chunks, "ok"));
                    summary.wall_reads += 1;
                }
            }
        }
    }

    let mut s = Session::new(&mut sim, horizon, ADMIN);
    let list = read_member_list(&mut s, &admin)?;
    summary.end_s = s.now.secs_f64();
    summary.members = list.list.len();
    summary.list_counter = list.counter;
    summary.list_chunks = list.chunks;
    summary.wall_bytes = wall_len;
    summary.wall_chunks = sealed_chunk_count(wall_len, cfg.put_capacity);
    summary.dht_ops = sim.op_count();
    Ok(ScenarioRun { summary, records, arrivals })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricsFormat {
    Csv,
    Jsonl,
}

impl MetricsFormat {
    /// `.jsonl` and `.json` select JSON lines; anything else is CSV.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json") => Self::Jsonl,
            _ => Self::Csv,
        }
    }
}

pub fn write_metrics<W: Write>(records: &[MetricsRecord], format: MetricsFormat, out: W) -> std::io::Result<()> {
    match format {
        MetricsFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for r in records {
                w.serialize(r)?;
            }
            w.flush()
        }
        MetricsFormat::Jsonl => {
            let mut out = std::io::BufWriter::new(out);
            for r in records {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n")?;
            }
            out.flush()
        }
    }
}
