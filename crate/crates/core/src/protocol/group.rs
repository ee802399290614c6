use rand::{CryptoRng, RngCore};

use super::storage::{
    check_outcomes, is_conflict, open_content, plan_writes, read_structure, seal_content, write_structure,
    StoredStructure, MAX_WRITE_ATTEMPTS,
};
use super::{GroupKeys, GroupPolicy, ListVisibility, ProtocolError, Result, RoleView};
use crate::crypto::{address_of, derived_address, directory_address, KeyPair, PublicKey, SymKey};
use crate::dht::{PutOutcome, Session};
use crate::wire::{
    decode_root_payload, encode_root, frame_inbox, make_once_ticket, MemberList, NameRecord, PublishedKey, RootInfo,
    StructureKind,
};

/// A decrypted member list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListSnapshot {
    pub counter: u64,
    pub list: MemberList,
    pub chunks: usize,
    pub(crate) slot_counters: Vec<Option<u64>>,
}

/// Puts `value` into an inbox cell, splitting it when needed.
pub(crate) fn put_inbox<R: RngCore + ?Sized>(
    s: &mut Session<'_>,
    addr: &crate::crypto::Address,
    msg: &crate::wire::InboxMessage,
    component: &'static str,
    rng: &mut R,
) -> Result<()> {
    for part in frame_inbox(msg, s.capacity(), rng) {
        if let PutOutcome::Reject(reason) = s.put(addr, &part) {
            return Err(ProtocolError::Node { component, reason });
        }
    }
    Ok(())
}

/// Runs the creation protocol: root, list, wall and once-ticket are put in
/// parallel, then the name is published. Nothing is rolled back when a
/// capture fails; the error lists what was captured.
pub fn create_group<R: RngCore + CryptoRng + ?Sized>(
    s: &mut Session<'_>,
    policy: GroupPolicy,
    name: &str,
    rng: &mut R,
) -> Result<GroupKeys> {
    policy.validate()?;
    match lookup_name(s, name) {
        Ok(claimants) => {
            return Err(ProtocolError::Precondition(format!(
                "name {name:?} already claimed by {} root key(s)",
                claimants.len()
            )))
        }
        Err(ProtocolError::NotFound(_)) => {}
        Err(e) => return Err(e),
    }
    let keys = GroupKeys::generate(rng);
    create_group_with_keys(s, policy, name, &keys, rng)?;
    Ok(keys)
}

pub(crate) fn create_group_with_keys<R: RngCore + CryptoRng + ?Sized>(
    s: &mut Session<'_>,
    policy: GroupPolicy,
    name: &str,
    keys: &GroupKeys,
    rng: &mut R,
) -> Result<()> {
    let published = if policy.list_visibility == ListVisibility::Anyone {
        vec![PublishedKey::ListPublic(keys.list.public.clone()), PublishedKey::ListSym(keys.list_sym.clone())]
    } else {
        Vec::new()
    };
    let root = encode_root(0, &keys.root, &keys.inbox, &published);
    let list_blob = seal_content(&keys.list_sym, 0, &MemberList::default().encode(), rng);
    let wall_blob = seal_content(&keys.wall_sym, 0, &[], rng);

    let mut writes = vec![(address_of(&keys.root.public), root.to_bytes())];
    let mut spans: Vec<(&'static str, usize)> = vec![("root", 1)];
    for (name, kp, kind, blob) in [
        ("list", &keys.list, StructureKind::List, list_blob),
        ("wall", &keys.wall, StructureKind::Wall, wall_blob),
    ] {
        let w = plan_writes(s, kp, kind, 0, &blob, &[])?;
        spans.push((name, w.len()));
        writes.extend(w);
    }
    let ticket = make_once_ticket(0, &keys.list, rng);
    let ticket_parts = frame_inbox(&ticket, s.capacity(), rng);
    spans.push(("once", ticket_parts.len()));
    let once = derived_address(&keys.inbox.public, 0);
    writes.extend(ticket_parts.into_iter().map(|p| (once, p)));

    let outcomes = s.put_all(&writes);
    let mut captured = Vec::new();
    let mut offset = 0;
    for (component, n) in spans {
        if let Err(ProtocolError::Node { reason, .. }) = check_outcomes(&outcomes[offset..offset + n], component) {
            return Err(ProtocolError::Creation { component, reason, captured });
        }
        captured.push(component);
        offset += n;
    }
    publish_name(s, name, &keys.root)
}

/// `{name.K_r}_{K_r^-1}` appended to the name's directory cell.
pub fn publish_name(s: &mut Session<'_>, name: &str, root: &KeyPair) -> Result<()> {
    match s.put(&directory_address(name), &NameRecord::sign(name, root).to_bytes()) {
        PutOutcome::Ack => Ok(()),
        PutOutcome::Reject(reason) => Err(ProtocolError::Node { component: "directory", reason }),
    }
}

/// Every validly self-signed claimant of `name`, first writer first.
pub fn lookup_name(s: &mut Session<'_>, name: &str) -> Result<Vec<PublicKey>> {
    let mut out: Vec<PublicKey> = Vec::new();
    for value in s.get(&directory_address(name)).values() {
        if let Ok(rec) = NameRecord::decode(value) {
            if rec.name == name && !out.contains(&rec.root_key) {
                out.push(rec.root_key);
            }
        }
    }
    if out.is_empty() {
        return Err(ProtocolError::NotFound(format!("name {name:?}")));
    }
    Ok(out)
}

/// The first claimant of `name`.
pub fn resolve_name(s: &mut Session<'_>, name: &str) -> Result<PublicKey> {
    Ok(lookup_name(s, name)?.remove(0))
}

/// Fetches and fully verifies a group root (outer and inner signatures).
pub fn read_root(s: &mut Session<'_>, root_key: &PublicKey) -> Result<RootInfo> {
    let stored = read_structure(s, root_key, StructureKind::Root)?
        .ok_or_else(|| ProtocolError::NotFound(format!("root of {}", root_key.short())))?;
    decode_root_payload(&stored.blob, root_key, stored.counter)
        .map_err(|e| ProtocolError::Integrity(format!("root: {e}")))
}

/// List keys usable by `view`: its own, or those the root publishes.
fn list_access(s: &mut Session<'_>, view: &RoleView) -> Result<(PublicKey, SymKey)> {
    if let (Some(k), Some(sym)) = (&view.list_key, &view.list_sym) {
        return Ok((k.clone(), sym.clone()));
    }
    match read_root(s, &view.root_key)?.published_list() {
        (Some(k), Some(sym)) => Ok((k, sym)),
        _ => Err(ProtocolError::AccessDenied("list key S_l")),
    }
}

pub(crate) fn read_list_with(s: &mut Session<'_>, list_key: &PublicKey, sym: &SymKey) -> Result<ListSnapshot> {
    let stored = read_structure(s, list_key, StructureKind::List)?
        .ok_or_else(|| ProtocolError::NotFound("member list".into()))?;
    let content = open_content(sym, &stored, "member list")?;
    let list = MemberList::decode(&content).map_err(|e| ProtocolError::Integrity(format!("member list: {e}")))?;
    Ok(ListSnapshot { counter: stored.counter, list, chunks: stored.chunks(), slot_counters: stored.slot_counters })
}

pub fn read_member_list(s: &mut Session<'_>, view: &RoleView) -> Result<ListSnapshot> {
    let (key, sym) = list_access(s, view)?;
    read_list_with(s, &key, &sym)
}

pub(crate) fn read_wall_stored(s: &mut Session<'_>, view: &RoleView) -> Result<(Vec<u8>, StoredStructure)> {
    let sym = view.need_wall_sym()?;
    let key = view.need_wall_key()?;
    let stored = read_structure(s, key, StructureKind::Wall)?.ok_or_else(|| ProtocolError::NotFound("wall".into()))?;
    Ok((open_content(sym, &stored, "wall")?, stored))
}

pub fn read_wall(s: &mut Session<'_>, view: &RoleView) -> Result<Vec<u8>> {
    read_wall_stored(s, view).map(|(content, _)| content)
}

/// Replaces the wall content with counter `c_w + 1`. Returns the number of
/// chunks written.
pub fn write_wall<R: RngCore + CryptoRng + ?Sized>(
    s: &mut Session<'_>,
    view: &RoleView,
    content: &[u8],
    rng: &mut R,
) -> Result<usize> {
    let signer = view.need_wall()?;
    let sym = view.need_wall_sym()?;
    for _ in 0..MAX_WRITE_ATTEMPTS {
        let stored = read_structure(s, &signer.public, StructureKind::Wall)?
            .ok_or_else(|| ProtocolError::NotFound("wall".into()))?;
        let counter = stored.counter.wrapping_add(1);
        let blob = seal_content(sym, counter, content, rng);
        match write_structure(s, signer, StructureKind::Wall, counter, &blob, &stored.slot_counters, "wall") {
            Err(e) if is_conflict(&e) => continue,
            other => return other,
        }
    }
    Err(ProtocolError::Conflict("wall"))
}
