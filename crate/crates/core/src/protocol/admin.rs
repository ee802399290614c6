use rand::{CryptoRng, RngCore};
use serde::Serialize;

use super::group::{put_inbox, read_list_with, read_wall_stored, ListSnapshot};
use super::storage::{is_conflict, seal_content, write_structure, MAX_WRITE_ATTEMPTS};
use super::{ticket_is_fresh, JoinPolicy, ProtocolError, Result, RoleView};
use crate::crypto::{address_of, derived_address, KeyPair, PublicKey, SymKey};
use crate::dht::{SimTime, Session};
use crate::wire::{
    make_once_ticket, open_join, open_once_ticket, reassemble_inbox, seal_helo, HeloBody, JoinRequest, MemberEntry,
    MemberList, RecordType, StructureKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "decision")]
pub enum JoinDecision {
    Accepted { counter: u64 },
    /// The principal is already listed; nothing changes and no helo is sent.
    AlreadyMember,
    RejectedStale { ticket: u64, list: u64 },
    RejectedInvalidTicket,
    RejectedByPolicy,
}

impl JoinDecision {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Self::Accepted { .. })
    }
}

/// Administrator-side record of one processed request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinOutcome {
    pub principal: PublicKey,
    pub join_inbox: PublicKey,
    pub decision: JoinDecision,
    pub started: SimTime,
    pub finished: SimTime,
    /// Member list chunks after processing.
    pub list_chunks: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JoinBatch {
    pub outcomes: Vec<JoinOutcome>,
    /// Join requests that could not be decrypted or verified, plus
    /// entries that were not inbox messages at all.
    pub skipped: usize,
}

struct AdminKeys<'a> {
    inbox: &'a KeyPair,
    list: &'a KeyPair,
    list_sym: &'a SymKey,
}

fn admin_keys(admin: &RoleView) -> Result<AdminKeys<'_>> {
    Ok(AdminKeys { inbox: admin.need_inbox()?, list: admin.need_list()?, list_sym: admin.need_list_sym()? })
}

fn helo_for(admin: &RoleView) -> Result<HeloBody> {
    let policy = admin.need_policy()?;
    let wall = admin.need_wall()?;
    Ok(HeloBody {
        epoch: admin.epoch,
        list_key: admin.need_list()?.public.clone(),
        wall_key: wall.public.clone(),
        keys: policy.granted_keys(admin.need_list_sym()?, admin.need_wall_sym()?, wall),
    })
}

/// Refreshes the once-ticket, then writes `list` as version `counter`.
fn commit_list<R: RngCore + CryptoRng + ?Sized>(
    s: &mut Session<'_>,
    admin: &RoleView,
    current: &ListSnapshot,
    list: &MemberList,
    rng: &mut R,
) -> Result<usize> {
    let keys = admin_keys(admin)?;
    let counter = current.counter.wrapping_add(1);
    let ticket = make_once_ticket(counter, keys.list, rng);
    put_inbox(s, &derived_address(&keys.inbox.public, 0), &ticket, "once ticket", rng)?;
    let blob = seal_content(keys.list_sym, counter, &list.encode(), rng);
    write_structure(s, keys.list, StructureKind::List, counter, &blob, &current.slot_counters, "member list")
}

/// Read-modify-write of the member list with bounded retries. `edit`
/// returns `None` to leave the list alone.
fn mutate_list<R, F, T>(s: &mut Session<'_>, admin: &RoleView, rng: &mut R, mut edit: F) -> Result<(T, usize)>
where
    R: RngCore + CryptoRng + ?Sized,
    F: FnMut(&ListSnapshot) -> Result<(T, Option<MemberList>)>,
{
    let keys = admin_keys(admin)?;
    for _ in 0..MAX_WRITE_ATTEMPTS {
        let current = read_list_with(s, &keys.list.public, keys.list_sym)?;
        let (value, new_list) = edit(&current)?;
        let Some(new_list) = new_list else {
            return Ok((value, current.chunks));
        };
        match commit_list(s, admin, &current, &new_list, rng) {
            Ok(chunks) => return Ok((value, chunks)),
            Err(e) if is_conflict(&e) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(ProtocolError::Conflict("member list"))
}

fn process_request<R: RngCore + CryptoRng + ?Sized>(
    s: &mut Session<'_>,
    admin: &RoleView,
    req: &JoinRequest,
    approve: &mut dyn FnMut(&JoinRequest) -> bool,
    rng: &mut R,
) -> Result<JoinOutcome> {
    let started = s.now;
    let keys = admin_keys(admin)?;
    let policy = *admin.need_policy()?;
    let helo = helo_for(admin)?;
    let ticket = open_once_ticket(&req.ticket, keys.list);
    let (decision, list_chunks) = mutate_list(s, admin, rng, |current| {
        let ticket = match &ticket {
            Ok(t) => *t,
            Err(_) => return Ok((JoinDecision::RejectedInvalidTicket, None)),
        };
        if !ticket_is_fresh(ticket, current.counter) {
            return Ok((JoinDecision::RejectedStale { ticket, list: current.counter }, None));
        }
        if current.list.contains(&req.principal) {
            return Ok((JoinDecision::AlreadyMember, None));
        }
        if policy.join == JoinPolicy::SelectedJoin && !approve(req) {
            return Ok((JoinDecision::RejectedByPolicy, None));
        }
        let mut list = current.list.clone();
        list.entries.push(MemberEntry { principal: req.principal.clone(), inbox: Some(req.join_inbox.clone()) });
        Ok((JoinDecision::Accepted { counter: current.counter.wrapping_add(1) }, Some(list)))
    })?;
    if decision.is_accepted() {
        let msg = seal_helo(&helo, keys.inbox, &req.join_inbox, rng);
        put_inbox(s, &address_of(&req.join_inbox), &msg, "helo", rng)?;
    }
    Ok(JoinOutcome {
        principal: req.principal.clone(),
        join_inbox: req.join_inbox.clone(),
        decision,
        started,
        finished: s.now,
        list_chunks,
    })
}

/// Fetches new entries of the group inbox and processes every join request
/// among them. Under `SelectedJoin`, `approve` decides; otherwise every
/// request with a fresh ticket is accepted.
pub fn admin_process_join<R: RngCore + CryptoRng + ?Sized>(
    s: &mut Session<'_>,
    admin: &mut RoleView,
    approve: &mut dyn FnMut(&JoinRequest) -> bool,
    rng: &mut R,
) -> Result<JoinBatch> {
    let inbox = admin.need_inbox()?.clone();
    helo_for(admin)?;
    let entries: Vec<Vec<u8>> =
        s.get(&address_of(&inbox.public)).values().into_iter().map(<[u8]>::to_vec).collect();
    let start = admin.inbox_cursor.min(entries.len());
    let fresh = reassemble_inbox(&entries[start..]);
    let mut batch = JoinBatch { skipped: fresh.unparsed, ..JoinBatch::default() };
    for (_, msg) in fresh.messages.iter().filter(|(_, m)| m.rtype == RecordType::Join) {
        match open_join(msg, &inbox) {
            Ok(req) => batch.outcomes.push(process_request(s, admin, &req, approve, rng)?),
            Err(_) => batch.skipped += 1,
        }
    }
    admin.inbox_cursor = start + fresh.resume_index(entries.len() - start);
    Ok(batch)
}

/// `admin_process_join` approving every request.
pub fn process_joins<R: RngCore + CryptoRng + ?Sized>(s: &mut Session<'_>, admin: &mut RoleView, rng: &mut R) -> Result<JoinBatch> {
    admin_process_join(s, admin, &mut |_| true, rng)
}

/// Lists `principal` directly, e.g. a subgroup's root key. Returns the new
/// list counter, or the current one if already listed.
pub fn admin_add_member<R: RngCore + CryptoRng + ?Sized>(
    s: &mut Session<'_>,
    admin: &RoleView,
    principal: &PublicKey,
    inbox: Option<&PublicKey>,
    rng: &mut R,
) -> Result<u64> {
    mutate_list(s, admin, rng, |current| {
        if current.list.contains(principal) {
            return Ok((current.counter, None));
        }
        let mut list = current.list.clone();
        list.entries.push(MemberEntry { principal: principal.clone(), inbox: inbox.cloned() });
        Ok((current.counter.wrapping_add(1), Some(list)))
    })
    .map(|(c, _)| c)
}

/// Bans `banned`: moves the wall to a fresh key pair and `S_w`, drops the
/// entry from the list and sends the new keys to every remaining member.
/// Returns the number of helos sent.
pub fn renew_keys_ban<R: RngCore + CryptoRng + ?Sized>(
    s: &mut Session<'_>,
    admin: &mut RoleView,
    banned: &PublicKey,
    rng: &mut R,
) -> Result<usize> {
    let keys = admin_keys(admin)?;
    admin.need_policy()?;
    let current = read_list_with(s, &keys.list.public, keys.list_sym)?;
    if !current.list.contains(banned) {
        return Err(ProtocolError::Precondition(format!("{} is not a member", banned.short())));
    }
    let remaining: Vec<MemberEntry> = current.list.entries.iter().filter(|e| &e.principal != banned).cloned().collect();
    if let Some(e) = remaining.iter().find(|e| e.inbox.is_none()) {
        return Err(ProtocolError::Precondition(format!(
            "member {} has no known inbox; renewal would lock it out",
            e.principal.short()
        )));
    }

    let (content, _) = read_wall_stored(s, admin)?;
    let new_wall = KeyPair::generate(rng);
    let new_sym = SymKey::generate(rng);
    let blob = seal_content(&new_sym, 0, &content, rng);
    write_structure(s, &new_wall, StructureKind::Wall, 0, &blob, &[], "renewed wall")?;
    admin.wall_key = Some(new_wall.public.clone());
    admin.wall = Some(new_wall);
    admin.wall_sym = Some(new_sym);

    mutate_list(s, admin, rng, |cur| {
        let list = MemberList { entries: cur.list.entries.iter().filter(|e| &e.principal != banned).cloned().collect() };
        Ok(((), (list.len() != cur.list.len()).then_some(list)))
    })?;

    admin.epoch += 1;
    let helo = helo_for(admin)?;
    let inbox = admin.need_inbox()?;
    for entry in &remaining {
        let member_inbox = entry.inbox.as_ref().expect("checked above");
        let msg = seal_helo(&helo, inbox, member_inbox, rng);
        put_inbox(s, &address_of(member_inbox), &msg, "helo", rng)?;
    }
    Ok(remaining.len())
}
