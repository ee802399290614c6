//! In-process simulated DHT with storing-node capture/update rules,
//! simulated time, per-node behaviours and observation logs.

mod latency;
mod snapshot;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crypto::{chunk_address, Address};
use crate::wire::{Chunk, InboxValue, RelayEnvelope, StructureRecord};

pub use latency::{LatencyDist, LatencyModel};
pub use snapshot::SnapshotError;

/// Simulated time in microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: Self = Self(0);

    pub fn from_secs_f64(secs: f64) -> Self {
        Self((secs * 1e6).round().max(0.0) as u64)
    }

    pub fn from_millis_f64(ms: f64) -> Self {
        Self((ms * 1e3).round().max(0.0) as u64)
    }

    pub fn secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn plus(self, micros: u64) -> Self {
        Self(self.0.saturating_add(micros))
    }

    pub fn since(self, earlier: SimTime) -> SimTime {
        Self(self.0.saturating_sub(earlier.0))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.secs_f64())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub latency: LatencyModel,
    pub replication: u32,
    pub put_capacity: usize,
    /// Maximum entries per raw cell; `None` means unbounded.
    pub inbox_limit: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { seed: 0, latency: LatencyModel::default(), replication: 19, put_capacity: 512, inbox_limit: None }
    }
}

impl SimConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.replication == 0 {
            return Err("replication must be at least 1".into());
        }
        if self.put_capacity == 0 {
            return Err("put capacity must be at least 1".into());
        }
        self.latency.validate()
    }
}

/// What a storing node holds for one address.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum AddressState {
    #[default]
    Empty,
    Captured { record: StructureRecord },
    RawCell { entries: Vec<Vec<u8>> },
}

impl AddressState {
    pub fn counter(&self) -> Option<u64> {
        match self {
            Self::Captured { record } => Some(record.counter),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeBehavior {
    Honest,
    PassiveObserver,
    /// Stores anything without checking signatures or counters.
    NoVerify,
}

/// Which addresses a behaviour applies to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddressSelector {
    All,
    Only(BTreeSet<Address>),
    AllExcept(BTreeSet<Address>),
    /// A pseudo-random fraction of the address space, fixed by `salt`.
    Sampled { salt: u64, fraction: f64 },
}

impl AddressSelector {
    pub fn matches(&self, addr: &Address) -> bool {
        match self {
            Self::All => true,
            Self::Only(set) => set.contains(addr),
            Self::AllExcept(set) => !set.contains(addr),
            Self::Sampled { salt, fraction } => {
                let digest = Sha256::new().chain_update(salt.to_be_bytes()).chain_update(addr.as_bytes()).finalize();
                let x = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
                (x as f64 / u64::MAX as f64) < *fraction
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorRule {
    pub selector: AddressSelector,
    pub behavior: NodeBehavior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Put,
    Get,
    Forward,
}

/// The party a storing node sees issuing a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Requester {
    Client(u64),
    /// A relay node, identified by the address it serves.
    Node(Address),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub time: SimTime,
    pub op: Op,
    pub address: Address,
    #[serde(with = "hex_values")]
    pub values: Vec<Vec<u8>>,
    pub requester: Requester,
}

mod hex_values {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(values: &[Vec<u8>], s: S) -> Result<S::Ok, S::Error> {
        values.iter().map(hex::encode).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<u8>>, D::Error> {
        Vec::<String>::deserialize(d)?
            .into_iter()
            .map(|v| hex::decode(v).map_err(serde::de::Error::custom))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    TooLarge,
    CaptureDenied,
    UpdateDenied,
    NotInbox,
    InboxFull,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TooLarge => "too_large",
            Self::CaptureDenied => "capture_denied",
            Self::UpdateDenied => "update_denied",
            Self::NotInbox => "not_inbox",
            Self::InboxFull => "inbox_full",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Ack,
    Reject(RejectReason),
}

impl PutOutcome {
    pub fn is_ack(self) -> bool {
        self == Self::Ack
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GetResult {
    Empty,
    Record(Vec<u8>),
    Cell(Vec<Vec<u8>>),
}

impl GetResult {
    /// Every stored value, oldest first.
    pub fn values(&self) -> Vec<&[u8]> {
        match self {
            Self::Empty => Vec::new(),
            Self::Record(r) => vec![r.as_slice()],
            Self::Cell(entries) => entries.iter().map(Vec::as_slice).collect(),
        }
    }
}

/// A result together with its simulated completion time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completed<T> {
    pub value: T,
    pub done: SimTime,
}

/// One DHT operation as seen by the metrics trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpRecord {
    pub time: SimTime,
    pub op: Op,
    pub address: Address,
    pub latency: SimTime,
    pub outcome: String,
}

/// The client-facing PUT/GET interface.
pub trait Dht {
    fn put(&mut self, addr: &Address, value: &[u8], now: SimTime, who: Requester) -> Completed<PutOutcome>;
    fn get(&mut self, addr: &Address, now: SimTime, who: Requester) -> Completed<GetResult>;
    /// A relay hop: the node at `addr` sees the value but does not store it.
    fn forward(&mut self, addr: &Address, value: &[u8], now: SimTime, who: Requester) -> Completed<()>;
    fn put_capacity(&self) -> usize;
    fn clock(&self) -> SimTime;
}

pub struct Simulator {
    config: SimConfig,
    rng: ChaCha20Rng,
    clock: SimTime,
    ops: u64,
    state: BTreeMap<Address, AddressState>,
    rules: Vec<BehaviorRule>,
    log: Vec<Observation>,
    trace: Option<Vec<OpRecord>>,
}

impl fmt::Debug for Simulator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Simulator")
            .field("clock", &self.clock)
            .field("ops", &self.ops)
            .field("addresses", &self.state.len())
            .finish_non_exhaustive()
    }
}

/// Size of `value` that counts against the per-PUT capacity.
pub fn data_len(value: &[u8]) -> usize {
    if let Ok(rec) = StructureRecord::parse(value) {
        return Chunk::from_bytes(&rec.payload).map(|c| c.body.len()).unwrap_or(rec.payload.len());
    }
    if let Ok(v) = InboxValue::parse(value) {
        return v.body_len();
    }
    if let Ok(env) = RelayEnvelope::from_bytes(value) {
        return data_len(&env.inner);
    }
    value.len()
}

/// Whether `record` may live at `addr`: chunk `i` of key `K` belongs at
/// `chunk_address(K, i)`.
fn location_ok(addr: &Address, record: &StructureRecord) -> bool {
    match Chunk::from_bytes(&record.payload) {
        Ok(chunk) => chunk_address(&record.clear_key, chunk.seq) == *addr,
        Err(_) => false,
    }
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self, String> {
        config.validate()?;
        Ok(Self {
            rng: ChaCha20Rng::seed_from_u64(config.seed),
            config,
            clock: SimTime::ZERO,
            ops: 0,
            state: BTreeMap::new(),
            rules: Vec::new(),
            log: Vec::new(),
            trace: None,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Number of operations applied so far.
    pub fn op_count(&self) -> u64 {
        self.ops
    }

    pub fn advance_time(&mut self, delta: SimTime) {
        self.clock = self.clock.plus(delta.0);
    }

    pub fn state(&self, addr: &Address) -> &AddressState {
        static EMPTY: AddressState = AddressState::Empty;
        self.state.get(addr).unwrap_or(&EMPTY)
    }

    pub fn addresses(&self) -> impl Iterator<Item = (&Address, &AddressState)> {
        self.state.iter()
    }

    /// Later rules take precedence over earlier ones.
    pub fn install_behavior(&mut self, selector: AddressSelector, behavior: NodeBehavior) {
        self.rules.push(BehaviorRule { selector, behavior });
    }

    pub fn clear_behaviors(&mut self) {
        self.rules.clear();
    }

    pub fn behaviors(&self) -> &[BehaviorRule] {
        &self.rules
    }

    pub fn behavior_at(&self, addr: &Address) -> NodeBehavior {
        self.rules
            .iter()
            .rev()
            .find(|r| r.selector.matches(addr))
            .map_or(NodeBehavior::Honest, |r| r.behavior)
    }

    pub fn observations(&self) -> &[Observation] {
        &self.log
    }

    /// Observations made by the node storing `addr`.
    pub fn log_for<'a>(&'a self, addr: &'a Address) -> impl Iterator<Item = &'a Observation> + 'a {
        self.log.iter().filter(move |o| &o.address == addr)
    }

    pub fn clear_log(&mut self) {
        self.log.clear();
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<OpRecord> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn begin(&mut self, now: SimTime) -> SimTime {
        self.clock = self.clock.max(now);
        self.ops += 1;
        self.clock
    }

    fn observe(&mut self, behavior: NodeBehavior, time: SimTime, op: Op, addr: &Address, values: Vec<Vec<u8>>, who: Requester) {
        if behavior == NodeBehavior::PassiveObserver {
            self.log.push(Observation { time, op, address: *addr, values, requester: who });
        }
    }

    fn record(&mut self, time: SimTime, op: Op, addr: &Address, latency: SimTime, outcome: String) {
        if let Some(trace) = &mut self.trace {
            trace.push(OpRecord { time, op, address: *addr, latency, outcome });
        }
    }

    fn sample(&mut self, dist: &LatencyDist) -> u64 {
        SimTime::from_millis_f64(dist.sample_ms(&mut self.rng)).0
    }

    fn put_latency(&mut self) -> u64 {
        let dist = self.config.latency.put_replica.clone();
        (0..self.config.replication).map(|_| self.sample(&dist)).max().unwrap_or(0)
    }

    fn apply_put(&mut self, behavior: NodeBehavior, addr: &Address, value: &[u8]) -> PutOutcome {
        if data_len(value) > self.config.put_capacity {
            return PutOutcome::Reject(RejectReason::TooLarge);
        }
        let limit = self.config.inbox_limit;
        let parsed = StructureRecord::parse(value).ok();
        let slot = self.state.entry(*addr).or_default();
        if behavior == NodeBehavior::NoVerify {
            *slot = match (parsed, std::mem::take(slot)) {
                (Some(record), _) => AddressState::Captured { record },
                (None, AddressState::Empty) => AddressState::RawCell { entries: vec![value.to_vec()] },
                (None, AddressState::Captured { record }) => {
                    AddressState::RawCell { entries: vec![record.to_bytes(), value.to_vec()] }
                }
                (None, AddressState::RawCell { mut entries }) => {
                    entries.push(value.to_vec());
                    AddressState::RawCell { entries }
                }
            };
            return PutOutcome::Ack;
        }
        match slot {
            AddressState::RawCell { entries } => {
                if limit.is_some_and(|l| entries.len() >= l) {
                    return PutOutcome::Reject(RejectReason::InboxFull);
                }
                entries.push(value.to_vec());
                PutOutcome::Ack
            }
            AddressState::Empty => match parsed {
                None => {
                    *slot = AddressState::RawCell { entries: vec![value.to_vec()] };
                    PutOutcome::Ack
                }
                Some(record) if record.counter == 0 && record.verify() && location_ok(addr, &record) => {
                    *slot = AddressState::Captured { record };
                    PutOutcome::Ack
                }
                Some(_) => PutOutcome::Reject(RejectReason::CaptureDenied),
            },
            AddressState::Captured { record: stored } => match parsed {
                None => PutOutcome::Reject(RejectReason::NotInbox),
                Some(record)
                    if record.clear_key == stored.clear_key
                        && record.kind == stored.kind
                        && record.counter == stored.counter.wrapping_add(1)
                        && record.verify()
                        && location_ok(addr, &record) =>
                {
                    *stored = record;
                    PutOutcome::Ack
                }
                Some(_) => PutOutcome::Reject(RejectReason::UpdateDenied),
            },
        }
    }

    fn read(&self, addr: &Address) -> GetResult {
        match self.state(addr) {
            AddressState::Empty => GetResult::Empty,
            AddressState::Captured { record } => GetResult::Record(record.to_bytes()),
            AddressState::RawCell { entries } => GetResult::Cell(entries.clone()),
        }
    }

    /// Writes a state directly, bypassing node rules. Used when building
    /// scenarios and when restoring snapshots.
    pub fn force_state(&mut self, addr: Address, state: AddressState) {
        if state == AddressState::Empty {
            self.state.remove(&addr);
        } else {
            self.state.insert(addr, state);
        }
    }
}

impl Dht for Simulator {
    fn put(&mut self, addr: &Address, value: &[u8], now: SimTime, who: Requester) -> Completed<PutOutcome> {
        let t = self.begin(now);
        let behavior = self.behavior_at(addr);
        let outcome = self.apply_put(behavior, addr, value);
        self.observe(behavior, t, Op::Put, addr, vec![value.to_vec()], who);
        let latency = match outcome {
            PutOutcome::Ack => self.put_latency(),
            PutOutcome::Reject(_) => self.sample(&self.config.latency.get.clone()),
        };
        let outcome_name = match outcome {
            PutOutcome::Ack => "ack".to_string(),
            PutOutcome::Reject(r) => r.to_string(),
        };
        self.record(t, Op::Put, addr, SimTime(latency), outcome_name);
        Completed { value: outcome, done: t.plus(latency) }
    }

    fn get(&mut self, addr: &Address, now: SimTime, who: Requester) -> Completed<GetResult> {
        let t = self.begin(now);
        let behavior = self.behavior_at(addr);
        let result = self.read(addr);
        self.observe(behavior, t, Op::Get, addr, result.values().into_iter().map(<[u8]>::to_vec).collect(), who);
        let latency = self.sample(&self.config.latency.get.clone());
        let outcome = match &result {
            GetResult::Empty => "empty".to_string(),
            GetResult::Record(_) => "record".to_string(),
            GetResult::Cell(e) => format!("cell:{}", e.len()),
        };
        self.record(t, Op::Get, addr, SimTime(latency), outcome);
        Completed { value: result, done: t.plus(latency) }
    }

    fn forward(&mut self, addr: &Address, value: &[u8], now: SimTime, who: Requester) -> Completed<()> {
        let t = self.begin(now);
        let behavior = self.behavior_at(addr);
        self.observe(behavior, t, Op::Forward, addr, vec![value.to_vec()], who);
        let latency = self.sample(&self.config.latency.forward.clone());
        self.record(t, Op::Forward, addr, SimTime(latency), "forwarded".into());
        Completed { value: (), done: t.plus(latency) }
    }

    fn put_capacity(&self) -> usize {
        self.config.put_capacity
    }

    fn clock(&self) -> SimTime {
        self.clock
    }
}

/// A cloneable, thread-safe handle; operations are applied one at a time.
#[derive(Clone, Debug)]
pub struct SharedSimulator {
    inner: Arc<Mutex<Simulator>>,
}

impl SharedSimulator {
    pub fn new(sim: Simulator) -> Self {
        Self { inner: Arc::new(Mutex::new(sim)) }
    }

    pub fn lock(&self) -> MutexGuard<'_, Simulator> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Dht for SharedSimulator {
    fn put(&mut self, addr: &Address, value: &[u8], now: SimTime, who: Requester) -> Completed<PutOutcome> {
        self.lock().put(addr, value, now, who)
    }

    fn get(&mut self, addr: &Address, now: SimTime, who: Requester) -> Completed<GetResult> {
        self.lock().get(addr, now, who)
    }

    fn forward(&mut self, addr: &Address, value: &[u8], now: SimTime, who: Requester) -> Completed<()> {
        self.lock().forward(addr, value, now, who)
    }

    fn put_capacity(&self) -> usize {
        self.lock().put_capacity()
    }

    fn clock(&self) -> SimTime {
        self.lock().clock()
    }
}

/// One client's view of the DHT: its identity and its own notion of "now".
/// Sequential calls advance `now` to each completion; the `*_all` calls
/// issue requests in parallel and wait for the slowest.
pub struct Session<'a> {
    dht: &'a mut dyn Dht,
    pub now: SimTime,
    pub who: Requester,
}

impl<'a> Session<'a> {
    pub fn new(dht: &'a mut dyn Dht, now: SimTime, who: Requester) -> Self {
        let now = now.max(dht.clock());
        Self { dht, now, who }
    }

    pub fn capacity(&self) -> usize {
        self.dht.put_capacity()
    }

    pub fn put(&mut self, addr: &Address, value: &[u8]) -> PutOutcome {
        let c = self.dht.put(addr, value, self.now, self.who);
        self.now = self.now.max(c.done);
        c.value
    }

    pub fn get(&mut self, addr: &Address) -> GetResult {
        let c = self.dht.get(addr, self.now, self.who);
        self.now = self.now.max(c.done);
        c.value
    }

    /// A PUT issued under another requester tag, e.g. by a relay node.
    pub fn put_as(&mut self, addr: &Address, value: &[u8], who: Requester) -> PutOutcome {
        let c = self.dht.put(addr, value, self.now, who);
        self.now = self.now.max(c.done);
        c.value
    }

    pub fn forward(&mut self, addr: &Address, value: &[u8], who: Requester) {
        let c = self.dht.forward(addr, value, self.now, who);
        self.now = self.now.max(c.done);
    }

    pub fn put_all(&mut self, writes: &[(Address, Vec<u8>)]) -> Vec<PutOutcome> {
        let start = self.now;
        let mut done = start;
        let out = writes
            .iter()
            .map(|(addr, value)| {
                let c = self.dht.put(addr, value, start, self.who);
                done = done.max(c.done);
                c.value
            })
            .collect();
        self.now = done;
        out
    }

    pub fn get_all(&mut self, addrs: &[Address]) -> Vec<GetResult> {
        let start = self.now;
        let mut done = start;
        let out = addrs
            .iter()
            .map(|addr| {
                let c = self.dht.get(addr, start, self.who);
                done = done.max(c.done);
                c.value
            })
            .collect();
        self.now = done;
        out
    }
}

/// A random requester tag for one-off clients.
pub fn random_client<R: Rng + ?Sized>(rng: &mut R) -> Requester {
    Requester::Client(rng.gen())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{address_of, gen_keypair, KeyPair};
    use crate::wire::{encode_capture, InboxMessage, RecordType, StructureKind};

    fn sim() -> Simulator {
        Simulator::new(SimConfig { latency: LatencyModel::zero(), ..SimConfig::with_seed(1) }).unwrap()
    }

    fn list_record(kp: &KeyPair, counter: u64, body: &[u8]) -> Vec<u8> {
        let chunk = Chunk { seq: 0, total: 1, body: body.to_vec() };
        encode_capture(StructureKind::List, counter, kp, chunk.to_bytes()).to_bytes()
    }

    const C: Requester = Requester::Client(0);

    #[test]
    fn capture_update_and_replay() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let kp = gen_keypair(&mut rng);
        let other = gen_keypair(&mut rng);
        let addr = address_of(&kp.public);
        let mut s = sim();
        assert_eq!(s.get(&addr, SimTime::ZERO, C).value, GetResult::Empty);
        assert_eq!(s.put(&addr, &list_record(&kp, 1, b"x"), SimTime::ZERO, C).value, PutOutcome::Reject(RejectReason::CaptureDenied));
        let r0 = list_record(&kp, 0, b"a");
        assert!(s.put(&addr, &r0, SimTime::ZERO, C).value.is_ack());
        assert_eq!(s.get(&addr, SimTime::ZERO, C).value, GetResult::Record(r0.clone()));
        // Wrong key, even at the right counter.
        let forged = encode_capture(StructureKind::List, 1, &other, Chunk { seq: 0, total: 1, body: vec![] }.to_bytes());
        assert_eq!(s.put(&addr, &forged.to_bytes(), SimTime::ZERO, C).value, PutOutcome::Reject(RejectReason::UpdateDenied));
        assert!(s.put(&addr, &list_record(&kp, 1, b"b"), SimTime::ZERO, C).value.is_ack());
        // Replay of the current counter.
        assert_eq!(s.put(&addr, &list_record(&kp, 1, b"b"), SimTime::ZERO, C).value, PutOutcome::Reject(RejectReason::UpdateDenied));
        assert_eq!(s.state(&addr).counter(), Some(1));
        let msg = InboxMessage::new(RecordType::Mess, b"hi".to_vec()).to_bytes();
        assert_eq!(s.put(&addr, &msg, SimTime::ZERO, C).value, PutOutcome::Reject(RejectReason::NotInbox));
    }

    #[test]
    fn counter_wraps() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let kp = gen_keypair(&mut rng);
        let addr = address_of(&kp.public);
        let mut s = sim();
        let top = StructureRecord::parse(&list_record(&kp, u64::MAX, b"")).unwrap();
        s.force_state(addr, AddressState::Captured { record: top });
        assert!(s.put(&addr, &list_record(&kp, 0, b""), SimTime::ZERO, C).value.is_ack());
        assert_eq!(s.state(&addr).counter(), Some(0));
    }

    #[test]
    fn wrong_location_and_bad_signature_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let kp = gen_keypair(&mut rng);
        let mut s = sim();
        let elsewhere = Address::random(&mut rng);
        assert_eq!(s.put(&elsewhere, &list_record(&kp, 0, b""), SimTime::ZERO, C).value, PutOutcome::Reject(RejectReason::CaptureDenied));
        let mut bytes = list_record(&kp, 0, b"abc");
        let n = bytes.len();
        bytes[n - 70] ^= 1;
        let addr = address_of(&kp.public);
        assert_eq!(s.put(&addr, &bytes, SimTime::ZERO, C).value, PutOutcome::Reject(RejectReason::CaptureDenied));
        assert_eq!(s.state(&addr), &AddressState::Empty);
    }

    #[test]
    fn raw_cell_appends_in_order() {
        let mut s = sim();
        let addr = Address([9; 20]);
        for i in 0..3u8 {
            assert!(s.put(&addr, &[0xee, i], SimTime::ZERO, C).value.is_ack());
        }
        assert_eq!(s.get(&addr, SimTime::ZERO, C).value, GetResult::Cell(vec![vec![0xee, 0], vec![0xee, 1], vec![0xee, 2]]));
    }

    #[test]
    fn raw_cell_accepts_capture_form_unverified() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let kp = gen_keypair(&mut rng);
        let addr = address_of(&kp.public);
        let mut s = sim();
        s.put(&addr, b"spam", SimTime::ZERO, C);
        let r = list_record(&kp, 7, b"");
        assert!(s.put(&addr, &r, SimTime::ZERO, C).value.is_ack());
        assert_eq!(s.get(&addr, SimTime::ZERO, C).value.values().len(), 2);
    }

    #[test]
    fn size_and_inbox_limits() {
        let mut s = Simulator::new(SimConfig { put_capacity: 4, inbox_limit: Some(1), latency: LatencyModel::zero(), ..SimConfig::default() }).unwrap();
        let addr = Address([1; 20]);
        let big = InboxMessage::new(RecordType::Mess, vec![0; 5]).to_bytes();
        assert_eq!(s.put(&addr, &big, SimTime::ZERO, C).value, PutOutcome::Reject(RejectReason::TooLarge));
        let ok = InboxMessage::new(RecordType::Mess, vec![0; 4]).to_bytes();
        assert!(s.put(&addr, &ok, SimTime::ZERO, C).value.is_ack());
        assert_eq!(s.put(&addr, &ok, SimTime::ZERO, C).value, PutOutcome::Reject(RejectReason::InboxFull));
    }

    #[test]
    fn behaviors_and_logging() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let kp = gen_keypair(&mut rng);
        let watched = address_of(&kp.public);
        let other = Address([2; 20]);
        let mut s = sim();
        s.install_behavior(AddressSelector::Only([watched].into()), NodeBehavior::PassiveObserver);
        s.put(&watched, &list_record(&kp, 0, b""), SimTime::ZERO, C);
        s.put(&other, b"x", SimTime::ZERO, C);
        s.get(&other, SimTime::ZERO, C);
        assert_eq!(s.observations().len(), 1);
        assert_eq!(s.observations()[0].address, watched);

        // No-verify node accepts a replay, honest node does not.
        s.install_behavior(AddressSelector::Only([watched].into()), NodeBehavior::NoVerify);
        assert!(s.put(&watched, &list_record(&kp, 0, b"again"), SimTime::ZERO, C).value.is_ack());
        s.install_behavior(AddressSelector::All, NodeBehavior::Honest);
        assert!(!s.put(&watched, &list_record(&kp, 0, b"again"), SimTime::ZERO, C).value.is_ack());
    }

    #[test]
    fn sampled_selector_fraction() {
        let sel = AddressSelector::Sampled { salt: 3, fraction: 0.25 };
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let hits = (0..20_000).filter(|_| sel.matches(&Address::random(&mut rng))).count();
        assert!((4500..5500).contains(&hits), "{hits}");
    }

    #[test]
    fn clock_is_monotone_and_put_is_slower_than_get() {
        let mut s = Simulator::new(SimConfig::with_seed(8)).unwrap();
        let addr = Address([3; 20]);
        let p = s.put(&addr, b"v", SimTime::from_secs_f64(10.0), C);
        let g = s.get(&addr, SimTime::from_secs_f64(5.0), C);
        assert_eq!(s.clock(), SimTime::from_secs_f64(10.0));
        assert!(p.done.since(SimTime::from_secs_f64(10.0)) > g.done.since(SimTime::from_secs_f64(10.0)));
        s.advance_time(SimTime::ZERO);
        assert_eq!(s.clock(), SimTime::from_secs_f64(10.0));
    }

    #[test]
    fn session_parallel_waits_for_slowest() {
        let mut s = Simulator::new(SimConfig::with_seed(9)).unwrap();
        let mut sess = Session::new(&mut s, SimTime::ZERO, C);
        let writes: Vec<_> = (0..5u8).map(|i| (Address([i; 20]), vec![0xee, i])).collect();
        sess.put_all(&writes);
        let t = sess.now;
        assert!(t > SimTime::ZERO);
        let trace_max = s.observations().len();
        assert_eq!(trace_max, 0);
    }
}
