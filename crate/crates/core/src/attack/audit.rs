//! Substring audit of storing-node logs for secret key material and
//! plaintexts.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;

use aho_corasick::AhoCorasick;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::crypto::{address_of, chunk_address, Address, PrivateKey, PublicKey, SymKey, PUBLIC_KEY_LEN};
use crate::dht::{AddressSelector, NodeBehavior, Observation, Op, Requester, Session, SimConfig, SimTime, Simulator};
use crate::protocol::{
    complete_join, create_group, create_principal, process_joins, read_wall, renew_keys_ban, request_join,
    send_private_message, send_relayed_message, write_wall, GroupPolicy, PrincipalIdentity, ProtocolError, RoleView,
};
use crate::wire::{InboxMessage, RecordType, StructureKind, StructureRecord};

/// Shortest byte run that counts as a leak.
pub const PATTERN_LEN: usize = 32;

/// A named secret and the byte runs that betray it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Secret {
    pub name: String,
    pub patterns: Vec<Vec<u8>>,
}

impl Secret {
    /// Splits `bytes` into `PATTERN_LEN` pieces. Each half of a 64-byte
    /// key is a pattern of its own, so leaking one half is caught.
    pub fn from_bytes(name: impl Into<String>, bytes: &[u8]) -> Self {
        let patterns = if bytes.len() < PATTERN_LEN {
            vec![bytes.to_vec()]
        } else {
            bytes.chunks_exact(PATTERN_LEN).map(<[u8]>::to_vec).collect()
        };
        Self { name: name.into(), patterns }
    }

    pub fn public_key(name: impl Into<String>, k: &PublicKey) -> Self {
        Self::from_bytes(name, k.as_bytes())
    }

    pub fn private_key(name: impl Into<String>, k: &PrivateKey) -> Self {
        Self::from_bytes(name, k.as_bytes())
    }

    pub fn sym_key(name: impl Into<String>, k: &SymKey) -> Self {
        Self::from_bytes(name, k.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Index into the simulator's observation log.
    pub observation: usize,
    pub time: SimTime,
    pub op: Op,
    pub address: Address,
    pub secret: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SecrecyReport {
    pub secrets_checked: usize,
    pub observations_scanned: usize,
    pub bytes_scanned: usize,
    pub violations: Vec<Violation>,
}

impl SecrecyReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Byte ranges that are clear by design: the clear key of a capture-form
/// record and the whole payload of a root.
fn clear_ranges(value: &[u8]) -> Vec<Range<usize>> {
    let Ok(rec) = StructureRecord::parse(value) else {
        return Vec::new();
    };
    // [tag][u64 counter][u32 len][key][u32 len][payload][sig]
    let key_start = 1 + 8;
    let key_end = key_start + 4 + PUBLIC_KEY_LEN;
    let mut out = Vec::with_capacity(2);
    out.push(key_start..key_end);
    if rec.kind == StructureKind::Root {
        out.push(key_end + 4..key_end + 4 + rec.payload.len());
    }
    out
}

/// Scans observations for any secret pattern outside the clear ranges.
pub fn secrecy_audit<'a, I>(observations: I, secrets: &[Secret]) -> SecrecyReport
where
    I: IntoIterator<Item = (usize, &'a Observation)>,
{
    let mut owner = Vec::new();
    let mut patterns = Vec::new();
    for (i, s) in secrets.iter().enumerate() {
        for p in &s.patterns {
            owner.push(i);
            patterns.push(p.as_slice());
        }
    }
    let matcher = AhoCorasick::new(&patterns).expect("byte patterns build");
    let mut report = SecrecyReport { secrets_checked: secrets.len(), observations_scanned: 0, bytes_scanned: 0, violations: Vec::new() };
    for (idx, obs) in observations {
        report.observations_scanned += 1;
        let mut hit = BTreeSet::new();
        for value in &obs.values {
            report.bytes_scanned += value.len();
            let masks = clear_ranges(value);
            let scanned;
            let haystack: &[u8] = if masks.is_empty() {
                value
            } else {
                let mut v = value.clone();
                for r in masks {
                    v[r].fill(0);
                }
                scanned = v;
                &scanned
            };
            for m in matcher.find_overlapping_iter(haystack) {
                hit.insert(owner[m.pattern().as_usize()]);
            }
        }
        for i in hit {
            report.violations.push(Violation {
                observation: idx,
                time: obs.time,
                op: obs.op,
                address: obs.address,
                secret: secrets[i].name.clone(),
            });
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlantedLeakReport {
    pub planted: usize,
    pub detected: usize,
    pub missed: Vec<String>,
}

/// Control run: each secret's first pattern is written inside a public
/// message to a fresh address, and the audit must flag every one of them.
pub fn planted_leak_control<R: Rng + ?Sized>(sim: &mut Simulator, secrets: &[Secret], rng: &mut R) -> PlantedLeakReport {
    let start = sim.observations().len();
    let mut planted_at = Vec::new();
    {
        let mut s = Session::new(sim, SimTime::ZERO, Requester::Client(0xbad));
        for secret in secrets {
            let mut body = vec![0u8; rng.gen_range(0..40)];
            rng.fill(body.as_mut_slice());
            body.extend_from_slice(&secret.patterns[0]);
            body.extend((0..rng.gen_range(0..40)).map(|_| rng.gen::<u8>()));
            let addr = Address::random(rng);
            s.put(&addr, &InboxMessage::new(RecordType::Mess, body).to_bytes());
            planted_at.push(addr);
        }
    }
    let report = secrecy_audit(sim.observations().iter().enumerate().skip(start), secrets);
    let mut missed = Vec::new();
    for (secret, addr) in secrets.iter().zip(&planted_at) {
        if !report.violations.iter().any(|v| v.address == *addr && v.secret == secret.name) {
            missed.push(secret.name.clone());
        }
    }
    PlantedLeakReport { planted: secrets.len(), detected: secrets.len() - missed.len(), missed }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LifecycleConfig {
    pub seed: u64,
    pub joins: usize,
    pub wall_ops: usize,
    pub private_messages: usize,
    pub bans: usize,
    pub policy: GroupPolicy,
    /// Forwarding probability for every second private message; `None`
    /// sends all of them directly.
    pub relay_pf: Option<f64>,
}

impl Default for LifecycleConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            joins: 20,
            wall_ops: 50,
            private_messages: 20,
            bans: 1,
            policy: GroupPolicy::shared_document(),
            relay_pf: Some(2.0 / 3.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LifecycleAudit {
    /// Adversary observing every address.
    pub all_addresses: SecrecyReport,
    /// Adversary observing everything but the group's and principals'
    /// captured structures; inboxes and once cells stay in view.
    pub non_group_addresses: SecrecyReport,
    pub planted: PlantedLeakReport,
    pub secrets: Vec<String>,
    pub operations: usize,
}

struct Member {
    id: PrincipalIdentity,
    view: RoleView,
    client: Requester,
}

fn writer<'a>(members: &'a [Member], admin: &'a RoleView, pick: usize) -> &'a RoleView {
    members.get(pick).map(|m| &m.view).filter(|v| v.wall.is_some()).unwrap_or(admin)
}

fn reader<'a>(members: &'a [Member], admin: &'a RoleView, pick: usize) -> &'a RoleView {
    members.get(pick).map(|m| &m.view).filter(|v| v.wall_sym.is_some()).unwrap_or(admin)
}

/// Create, joins, wall traffic, private messages and bans with every node
/// a passive observer, then audits the logs for every secret involved.
pub fn run_lifecycle_audit(cfg: &LifecycleConfig) -> Result<LifecycleAudit, ProtocolError> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut sim = Simulator::new(SimConfig::with_seed(cfg.seed)).map_err(ProtocolError::Precondition)?;
    sim.install_behavior(AddressSelector::All, NodeBehavior::PassiveObserver);
    let mut secrets = Vec::new();
    let mut managed: BTreeSet<Address> = BTreeSet::new();
    let mut wall_keys = Vec::new();
    let mut members: Vec<Member> = Vec::new();
    let mut banned: Vec<PrincipalIdentity> = Vec::new();

    let mut s = Session::new(&mut sim, SimTime::ZERO, Requester::Client(1));
    let keys = create_group(&mut s, cfg.policy, "audited", &mut rng)?;
    let mut admin = keys.administrator_view(cfg.policy);
    wall_keys.push(keys.wall.public.clone());

    // Requests in one batch share a ticket, so joins go one at a time.
    for i in 0..cfg.joins {
        let client = Requester::Client(100 + i as u64);
        s.who = client;
        let mut p = create_principal(&mut s, None, &mut rng)?;
        request_join(&mut s, &mut p, &keys.root.public, &mut rng)?;
        s.who = Requester::Client(1);
        process_joins(&mut s, &mut admin, &mut rng)?;
        s.who = client;
        let view = complete_join(&mut s, &mut p, &keys.root.public)?;
        members.push(Member { id: p, view, client });
    }

    let mut plaintexts = Vec::new();
    for op in 0..cfg.wall_ops {
        let pick = rng.gen_range(0..members.len().max(1));
        s.who = members.get(pick).map_or(Requester::Client(1), |m| m.client);
        if op % 2 == 0 {
            let mut content = vec![0u8; rng.gen_range(PATTERN_LEN..1500)];
            rng.fill(content.as_mut_slice());
            write_wall(&mut s, writer(&members, &admin, pick), &content, &mut rng)?;
            plaintexts.push(content);
        } else {
            read_wall(&mut s, reader(&members, &admin, pick))?;
        }
    }

    let mut bodies = Vec::new();
    for k in 0..cfg.private_messages {
        if members.len() < 2 {
            break;
        }
        let a = rng.gen_range(0..members.len());
        let b = (a + rng.gen_range(1..members.len())) % members.len();
        let mut body = vec![0u8; 64];
        rng.fill(body.as_mut_slice());
        s.who = members[a].client;
        let (sender, to) = (&members[a].id.principal, &members[b].id.inbox.public);
        match cfg.relay_pf {
            Some(pf) if k % 2 == 1 => {
                send_relayed_message(&mut s, sender, to, &body, pf, &mut rng)?;
            }
            _ => send_private_message(&mut s, sender, to, &body, &mut rng)?,
        }
        bodies.push(body);
    }

    for _ in 0..cfg.bans {
        if members.is_empty() {
            break;
        }
        let old_sym = admin.wall_sym.clone();
        let victim = members.remove(rng.gen_range(0..members.len()));
        s.who = Requester::Client(1);
        renew_keys_ban(&mut s, &mut admin, &victim.id.principal.public, &mut rng)?;
        banned.push(victim.id);
        if let Some(k) = admin.wall.as_ref() {
            wall_keys.push(k.public.clone());
            secrets.push(Secret::private_key(format!("K_w^-1 (renewed {})", wall_keys.len() - 1), &k.private));
        }
        if let (Some(new), Some(old)) = (&admin.wall_sym, old_sym) {
            debug_assert_ne!(new, &old);
            secrets.push(Secret::sym_key(format!("S_w (renewed {})", wall_keys.len() - 1), new));
        }
        for m in members.iter_mut() {
            s.who = m.client;
            m.view = complete_join(&mut s, &mut m.id, &keys.root.public)?;
        }
        let mut content = vec![0u8; 200];
        rng.fill(content.as_mut_slice());
        let pick = rng.gen_range(0..members.len().max(1));
        write_wall(&mut s, writer(&members, &admin, pick), &content, &mut rng)?;
        read_wall(&mut s, reader(&members, &admin, pick))?;
        plaintexts.push(content);
    }

    secrets.extend([
        Secret::sym_key("S_l", &keys.list_sym),
        Secret::sym_key("S_w", &keys.wall_sym),
        Secret::private_key("K_l^-1", &keys.list.private),
        Secret::private_key("K_w^-1", &keys.wall.private),
        Secret::private_key("K_i^-1", &keys.inbox.private),
        Secret::private_key("K_r^-1", &keys.root.private),
    ]);
    let everyone = members.iter().map(|m| &m.id).chain(banned.iter());
    for (i, p) in everyone.enumerate() {
        secrets.push(Secret::public_key(format!("K_p[{i}]"), &p.principal.public));
        secrets.push(Secret::private_key(format!("K_p^-1[{i}]"), &p.principal.private));
        secrets.push(Secret::private_key(format!("inbox K^-1[{i}]"), &p.inbox.private));
        for m in &p.memberships {
            secrets.push(Secret::public_key(format!("K_j[{i}]"), &m.join_inbox.public));
            secrets.push(Secret::private_key(format!("K_j^-1[{i}]"), &m.join_inbox.private));
        }
        managed.insert(address_of(&p.principal.public));
    }
    for (k, text) in plaintexts.iter().enumerate() {
        secrets.push(Secret::from_bytes(format!("wall plaintext[{k}]"), text));
    }
    for (k, body) in bodies.iter().enumerate() {
        secrets.push(Secret::from_bytes(format!("message[{k}]"), body));
    }

    managed.insert(keys.root_address());
    for key in std::iter::once(&keys.list.public).chain(wall_keys.iter()) {
        managed.extend(structure_addresses(&sim, key));
    }

    let operations = sim.op_count() as usize;
    let log = sim.observations();
    let all_addresses = secrecy_audit(log.iter().enumerate(), &secrets);
    let non_group_addresses =
        secrecy_audit(log.iter().enumerate().filter(|(_, o)| !managed.contains(&o.address)), &secrets);
    let planted = planted_leak_control(&mut sim, &secrets, &mut rng);
    Ok(LifecycleAudit {
        all_addresses,
        non_group_addresses,
        planted,
        secrets: secrets.into_iter().map(|s| s.name).collect(),
        operations,
    })
}

/// Every chunk address of the structure keyed by `key` that was touched.
fn structure_addresses(sim: &Simulator, key: &PublicKey) -> Vec<Address> {
    let touched: HashMap<Address, ()> = sim.observations().iter().map(|o| (o.address, ())).collect();
    let mut out = Vec::new();
    for i in 0u32.. {
        let a = chunk_address(key, i);
        if !touched.contains_key(&a) {
            break;
        }
        out.push(a);
    }
    out
}
