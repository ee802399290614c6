use rand::{CryptoRng, Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::group::{put_inbox, read_root};
use super::{ProtocolError, Result, Role, RoleView};
use crate::crypto::{address_of, derived_address, Address, KeyPair, PublicKey};
use crate::dht::{PutOutcome, Requester, Session};
use crate::wire::{
    encode_root, frame_inbox, open_helo, open_private_message, reassemble_inbox, seal_join, seal_private_message,
    InboxMessage, RecordType, RelayEnvelope, WireError,
};

/// Stop forwarding after this many relay hops.
pub const MAX_RELAY_HOPS: u32 = 10_000;

/// One principal's state for one group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Membership {
    pub root_key: PublicKey,
    pub group_inbox: PublicKey,
    /// `K_j`, fresh for this group.
    pub join_inbox: KeyPair,
    pub view: Option<RoleView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrincipalIdentity {
    pub principal: KeyPair,
    /// `K_i` of the principal's own inbox, announced in its root.
    pub inbox: KeyPair,
    pub memberships: Vec<Membership>,
}

impl PrincipalIdentity {
    pub fn membership(&self, root_key: &PublicKey) -> Option<&Membership> {
        self.memberships.iter().find(|m| &m.root_key == root_key)
    }

    fn membership_mut(&mut self, root_key: &PublicKey) -> Option<&mut Membership> {
        self.memberships.iter_mut().find(|m| &m.root_key == root_key)
    }
}

/// Captures `h(K_p)` with a root naming the principal's inbox key. A
/// principal that wants to stay anonymous passes no name and nothing goes
/// to the directory.
pub fn create_principal<R: RngCore + CryptoRng + ?Sized>(
    s: &mut Session<'_>,
    publish_as: Option<&str>,
    rng: &mut R,
) -> Result<PrincipalIdentity> {
    let principal = KeyPair::generate(rng);
    let inbox = KeyPair::generate(rng);
    let root = encode_root(0, &principal, &inbox, &[]);
    if let PutOutcome::Reject(reason) = s.put(&address_of(&principal.public), &root.to_bytes()) {
        return Err(ProtocolError::Node { component: "principal root", reason });
    }
    if let Some(name) = publish_as {
        super::group::publish_name(s, name, &principal)?;
    }
    Ok(PrincipalIdentity { principal, inbox, memberships: Vec::new() })
}

/// Stage one of joining: fetch the root and the once-ticket, then put the
/// doubly signed request, encrypted to `K_i`, into the group inbox. A
/// repeated request for the same group reuses its `K_j`.
pub fn request_join<R: RngCore + CryptoRng + ?Sized>(
    s: &mut Session<'_>,
    p: &mut PrincipalIdentity,
    root_key: &PublicKey,
    rng: &mut R,
) -> Result<()> {
    let root = read_root(s, root_key)?;
    let once = derived_address(&root.inbox_key, 0);
    let cell: Vec<Vec<u8>> = s.get(&once).values().into_iter().map(<[u8]>::to_vec).collect();
    let ticket = reassemble_inbox(&cell)
        .messages
        .into_iter()
        .rev()
        .map(|(_, m)| m)
        .find(|m| m.rtype == RecordType::Once)
        .ok_or_else(|| ProtocolError::NotFound("once ticket".into()))?;

    let join_inbox = match p.membership(root_key) {
        Some(m) => m.join_inbox.clone(),
        None => {
            let kj = KeyPair::generate(rng);
            p.memberships.push(Membership {
                root_key: root_key.clone(),
                group_inbox: root.inbox_key.clone(),
                join_inbox: kj.clone(),
                view: None,
            });
            kj
        }
    };
    let msg = seal_join(&p.principal, &join_inbox, &ticket, &root.inbox_key, rng);
    put_inbox(s, &address_of(&root.inbox_key), &msg, "join request", rng)
}

/// Stage three: reads `h(K_j)` and installs the keys of the newest valid
/// helo. Calling it again picks up helos sent after a key renewal.
pub fn complete_join(s: &mut Session<'_>, p: &mut PrincipalIdentity, root_key: &PublicKey) -> Result<RoleView> {
    let m = p
        .membership_mut(root_key)
        .ok_or_else(|| ProtocolError::Precondition("no join request was sent to this group".into()))?;
    let cell: Vec<Vec<u8>> = s.get(&address_of(&m.join_inbox.public)).values().into_iter().map(<[u8]>::to_vec).collect();
    let mut best = None;
    let mut forged = 0;
    for (_, msg) in reassemble_inbox(&cell).messages {
        if msg.rtype != RecordType::Helo {
            continue;
        }
        match open_helo(&msg, &m.join_inbox, &m.group_inbox) {
            Ok(body) => {
                if best.as_ref().is_none_or(|b: &crate::wire::HeloBody| body.epoch >= b.epoch) {
                    best = Some(body);
                }
            }
            Err(_) => forged += 1,
        }
    }
    let Some(helo) = best else {
        if forged > 0 {
            return Err(ProtocolError::Integrity(format!(
                "{forged} helo(s) in the join inbox fail verification under the group inbox key"
            )));
        }
        return Err(ProtocolError::Pending("no helo yet"));
    };
    let mut view = m.view.clone().unwrap_or_else(|| RoleView {
        role: Role::Member,
        ..RoleView::outsider(m.root_key.clone(), m.group_inbox.clone())
    });
    if m.view.is_none() || helo.epoch > view.epoch {
        view.install(helo.epoch, helo.list_key, helo.wall_key, helo.keys);
    }
    m.view = Some(view.clone());
    Ok(view)
}

/// A message read from an inbox.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InboxEntry {
    /// Cleartext `mess` anyone may have written.
    Public(Vec<u8>),
    /// Decrypted and signed by `sender`.
    Private { sender: PublicKey, body: Vec<u8> },
    /// Decrypted but the sender signature does not verify.
    Forged,
    /// Protocol traffic (join, helo, once).
    Protocol(RecordType),
}

pub fn read_inbox(s: &mut Session<'_>, owner: &KeyPair) -> Vec<InboxEntry> {
    let cell: Vec<Vec<u8>> = s.get(&address_of(&owner.public)).values().into_iter().map(<[u8]>::to_vec).collect();
    reassemble_inbox(&cell)
        .messages
        .into_iter()
        .map(|(_, msg)| match msg.rtype {
            RecordType::Mess => match open_private_message(&msg, owner) {
                Ok((sender, body)) => InboxEntry::Private { sender, body },
                Err(WireError::BadSignature) => InboxEntry::Forged,
                Err(_) => InboxEntry::Public(msg.body),
            },
            other => InboxEntry::Protocol(other),
        })
        .collect()
}

/// `mess.body` in clear.
pub fn send_public_message<R: RngCore + ?Sized>(s: &mut Session<'_>, to: &Address, body: &[u8], rng: &mut R) -> Result<()> {
    put_inbox(s, to, &InboxMessage::new(RecordType::Mess, body.to_vec()), "public message", rng)
}

/// `{{mess.body}_{K_p^-1}}_{K_i}`.
pub fn send_private_message<R: RngCore + CryptoRng + ?Sized>(
    s: &mut Session<'_>,
    sender: &KeyPair,
    recipient: &PublicKey,
    body: &[u8],
    rng: &mut R,
) -> Result<()> {
    let msg = seal_private_message(sender, recipient, body, rng);
    put_inbox(s, &address_of(recipient), &msg, "private message", rng)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RelayTrace {
    /// Relay-to-relay forwards after the first hop.
    pub extra_hops: u32,
    /// Relay addresses in order, `α` first.
    pub path: Vec<Address>,
    /// Requester tag seen by the node storing the delivered message.
    pub delivered_by: Requester,
    /// The hop limit stopped forwarding.
    pub truncated: bool,
}

/// Crowds-style delivery of already-framed inbox values to `destination`:
/// the sender hands them to a random relay `α`, each relay forwards to a
/// fresh random address with probability `p_f` and otherwise delivers.
pub fn relay_framed<R: Rng + ?Sized>(
    s: &mut Session<'_>,
    destination: &Address,
    parts: &[Vec<u8>],
    p_f: f64,
    rng: &mut R,
) -> Result<RelayTrace> {
    if !(p_f > 0.5 && p_f < 1.0) {
        return Err(ProtocolError::Precondition(format!("forwarding probability {p_f} outside (1/2, 1)")));
    }
    let envelopes: Vec<Vec<u8>> =
        parts.iter().map(|inner| RelayEnvelope { destination: *destination, inner: inner.clone() }.to_bytes()).collect();
    let origin = s.who;
    let mut current = Address::random(rng);
    let mut path = vec![current];
    for env in &envelopes {
        s.forward(&current, env, origin);
    }
    let mut extra_hops = 0;
    let mut truncated = false;
    while rng.gen_bool(p_f) {
        if extra_hops == MAX_RELAY_HOPS {
            truncated = true;
            break;
        }
        let next = Address::random(rng);
        for env in &envelopes {
            s.forward(&next, env, Requester::Node(current));
        }
        current = next;
        path.push(current);
        extra_hops += 1;
    }
    let delivered_by = Requester::Node(current);
    for part in parts {
        let outcome = s.put_as(destination, part, delivered_by);
        if let PutOutcome::Reject(reason) = outcome {
            return Err(ProtocolError::Node { component: "relayed message", reason });
        }
    }
    Ok(RelayTrace { extra_hops, path, delivered_by, truncated })
}

/// Private message delivered through the relay.
pub fn send_relayed_message<R: RngCore + CryptoRng + ?Sized>(
    s: &mut Session<'_>,
    sender: &KeyPair,
    recipient: &PublicKey,
    body: &[u8],
    p_f: f64,
    rng: &mut R,
) -> Result<RelayTrace> {
    if !(p_f > 0.5 && p_f < 1.0) {
        return Err(ProtocolError::Precondition(format!("forwarding probability {p_f} outside (1/2, 1)")));
    }
    let msg = seal_private_message(sender, recipient, body, rng);
    let parts = frame_inbox(&msg, s.capacity(), rng);
    relay_framed(s, &address_of(recipient), &parts, p_f, rng)
}
