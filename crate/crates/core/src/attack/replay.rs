//! Replay of an old member list through a predicted address.
//!
//! An adversary that knows `K_l` before the group exists writes a message
//! to `h(K_l)`, so the node holds an unverified cell instead of a captured
//! record. Every later list version is appended there, and so is an old
//! version the adversary replays, which readers then take as current.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::crypto::{address_of, Address, PublicKey};
use crate::dht::{AddressSelector, AddressState, NodeBehavior, Op, PutOutcome, Requester, Session, SimConfig, Simulator};
use crate::protocol::{
    complete_join, create_principal, process_joins, read_member_list, request_join, GroupKeys, GroupPolicy,
    JoinPolicy, ListVisibility, PrincipalIdentity, ProtocolError, RoleView,
};
use crate::wire::{InboxMessage, RecordType, StructureKind, StructureRecord};

const ADVERSARY: Requester = Requester::Client(0xad);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReplayScenario {
    /// The adversary learns `K_l` before the group captures `h(K_l)`.
    pub key_predicted: bool,
    /// The adversary's message reaches `h(K_l)` before the capture.
    pub demote_first: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EvidenceStep {
    pub actor: &'static str,
    pub action: String,
    pub address: Address,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttackOutcome {
    pub scenario: ReplayScenario,
    pub seed: u64,
    pub succeeded: bool,
    /// Reader's member list before and after the replay.
    pub view_before: Vec<String>,
    pub view_after: Vec<String>,
    /// Node state at `h(K_l)` at the end.
    pub list_state: String,
    pub evidence: Vec<EvidenceStep>,
}

struct Trace {
    steps: Vec<EvidenceStep>,
}

impl Trace {
    fn push(&mut self, actor: &'static str, action: impl Into<String>, address: Address, outcome: impl Into<String>) {
        self.steps.push(EvidenceStep { actor, action: action.into(), address, outcome: outcome.into() });
    }
}

fn outcome_str(o: PutOutcome) -> String {
    match o {
        PutOutcome::Ack => "ack".into(),
        PutOutcome::Reject(r) => format!("reject({r})"),
    }
}

fn state_str(state: &AddressState) -> String {
    match state {
        AddressState::Empty => "empty".into(),
        AddressState::Captured { record } => format!("captured(counter={})", record.counter),
        AddressState::RawCell { entries } => format!("raw_cell(entries={})", entries.len()),
    }
}

fn labelled(view: &Result<Vec<PublicKey>, ProtocolError>, names: &[(PublicKey, &str)]) -> Vec<String> {
    match view {
        Ok(keys) => keys
            .iter()
            .map(|k| names.iter().find(|(n, _)| n == k).map_or_else(|| k.short(), |(_, l)| (*l).to_string()))
            .collect(),
        Err(e) => vec![format!("error: {e}")],
    }
}

fn join(
    s: &mut Session<'_>,
    keys: &GroupKeys,
    admin: &mut RoleView,
    rng: &mut ChaCha20Rng,
) -> Result<(PrincipalIdentity, RoleView), ProtocolError> {
    let mut p = create_principal(s, None, rng)?;
    request_join(s, &mut p, &keys.root.public, rng)?;
    process_joins(s, admin, rng)?;
    let view = complete_join(s, &mut p, &keys.root.public)?;
    Ok((p, view))
}

fn read_view(s: &mut Session<'_>, reader: &RoleView) -> Result<Vec<PublicKey>, ProtocolError> {
    Ok(read_member_list(s, reader)?.list.entries.into_iter().map(|e| e.principal).collect())
}

/// Runs the attack with the adversary writing first.
pub fn run_replay_attack(seed: u64, key_predicted: bool) -> Result<AttackOutcome, ProtocolError> {
    run_replay_scenario(seed, ReplayScenario { key_predicted, demote_first: true })
}

pub fn run_replay_scenario(seed: u64, scenario: ReplayScenario) -> Result<AttackOutcome, ProtocolError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut sim = Simulator::new(SimConfig::with_seed(seed)).map_err(ProtocolError::Precondition)?;
    // The adversary sees every node's traffic.
    sim.install_behavior(AddressSelector::All, NodeBehavior::PassiveObserver);
    let policy = GroupPolicy {
        join: JoinPolicy::AnyoneMayJoin,
        list_visibility: ListVisibility::Members,
        wall_member_read: true,
        wall_member_write: false,
    };
    let keys = GroupKeys::generate(&mut rng);
    let list_addr = address_of(&keys.list.public);
    let mut trace = Trace { steps: Vec::new() };
    let mut s = Session::new(&mut sim, crate::dht::SimTime::ZERO, Requester::Client(1));

    // (1) The adversary turns its guess of h(K_l) into an inbox.
    let guess = if scenario.key_predicted { list_addr } else { Address::random(&mut rng) };
    let mess = InboxMessage::new(RecordType::Mess, b"message".to_vec()).to_bytes();
    if scenario.demote_first {
        let o = s.put_as(&guess, &mess, ADVERSARY);
        trace.push("adversary", "put mess to predicted list address", guess, outcome_str(o));
    }

    // (2)-(4) Creation and two joins, oblivious to the state of h(K_l).
    crate::protocol::create_group_with_keys(&mut s, policy, "target", &keys, &mut rng)?;
    trace.push("group", "create group (list counter 0)", list_addr, "ok");
    let mut admin = keys.administrator_view(policy);
    let (p1, reader) = join(&mut s, &keys, &mut admin, &mut rng)?;
    trace.push("group", "accept p1 (list counter 1)", list_addr, "ok");
    let (p2, _) = join(&mut s, &keys, &mut admin, &mut rng)?;
    trace.push("group", "accept p2 (list counter 2)", list_addr, "ok");
    let names = [(p1.principal.public.clone(), "p1"), (p2.principal.public.clone(), "p2")];
    let before = read_view(&mut s, &reader);

    if !scenario.demote_first {
        let o = s.put_as(&guess, &mess, ADVERSARY);
        trace.push("adversary", "put mess to list address after capture", guess, outcome_str(o));
    }

    // (5) Replay of the counter-1 list, taken from the adversary's logs.
    let old = sim
        .log_for(&list_addr)
        .filter(|o| o.op == Op::Put)
        .flat_map(|o| o.values.iter())
        .find(|v| StructureRecord::parse(v).is_ok_and(|r| r.kind == StructureKind::List && r.counter == 1))
        .cloned()
        .ok_or_else(|| ProtocolError::NotFound("counter-1 list record in observation log".into()))?;
    let mut s = Session::new(&mut sim, crate::dht::SimTime::ZERO, Requester::Client(1));
    let o = s.put_as(&list_addr, &old, ADVERSARY);
    trace.push("adversary", "replay list record with counter 1", list_addr, outcome_str(o));
    let after = read_view(&mut s, &reader);

    let has_p2 = |v: &Result<Vec<PublicKey>, ProtocolError>| v.as_ref().is_ok_and(|k| k.contains(&p2.principal.public));
    Ok(AttackOutcome {
        scenario,
        seed,
        succeeded: has_p2(&before) && !has_p2(&after) && after.is_ok(),
        view_before: labelled(&before, &names),
        view_after: labelled(&after, &names),
        list_state: state_str(sim.state(&list_addr)),
        evidence: trace.steps,
    })
}
