//! Client side of the group protocols: creation, directory, join, wall,
//! member list, messaging, relay and key renewal.

mod admin;
mod group;
mod keystore;
mod member;
mod storage;

use serde::{Deserialize, Serialize};

use crate::crypto::{address_of, derived_address, Address, KeyPair, PublicKey, SymKey};
use crate::dht::RejectReason;
use crate::wire::{GrantedKey, WireError};

pub use admin::{admin_add_member, admin_process_join, process_joins, renew_keys_ban, JoinBatch, JoinDecision, JoinOutcome};
pub use group::{
    create_group, lookup_name, publish_name, read_member_list, read_root, read_wall, resolve_name, write_wall,
    ListSnapshot,
};
pub(crate) use group::create_group_with_keys;
pub use keystore::{GroupRecord, Keystore, KeystoreError, DEFAULT_ROUNDS};
pub use member::{
    complete_join, create_principal, read_inbox, relay_framed, request_join, send_private_message,
    send_public_message, send_relayed_message, InboxEntry, Membership, PrincipalIdentity, RelayTrace, MAX_RELAY_HOPS,
};
pub use storage::{sealed_chunk_count, StoredStructure, MAX_WRITE_ATTEMPTS};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("{component}: rejected by storing node ({reason})")]
    Node { component: &'static str, reason: RejectReason },
    #[error("group creation aborted at {component} ({reason}); already captured: {captured:?}")]
    Creation { component: &'static str, reason: RejectReason, captured: Vec<&'static str> },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("access denied: missing {0}")]
    AccessDenied(&'static str),
    #[error("integrity alarm: {0}")]
    Integrity(String),
    #[error("cannot decrypt {0}")]
    Undecryptable(&'static str),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("nothing to do yet: {0}")]
    Pending(&'static str),
    #[error("concurrent update on {0}, gave up after retries")]
    Conflict(&'static str),
    #[error(transparent)]
    Wire(#[from] WireError),
}

pub type Result<T, E = ProtocolError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinPolicy {
    AnyoneMayJoin,
    SelectedJoin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ListVisibility {
    Anyone,
    Members,
    Administrator,
}

/// Join policy and visibility; decides which keys a helo carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupPolicy {
    pub join: JoinPolicy,
    pub list_visibility: ListVisibility,
    pub wall_member_read: bool,
    pub wall_member_write: bool,
}

impl GroupPolicy {
    /// Members receive no keys at all.
    pub fn totally_private() -> Self {
        Self {
            join: JoinPolicy::SelectedJoin,
            list_visibility: ListVisibility::Administrator,
            wall_member_read: false,
            wall_member_write: false,
        }
    }

    /// Anyone may join and edit the wall; the member list stays private.
    pub fn shared_document() -> Self {
        Self {
            join: JoinPolicy::AnyoneMayJoin,
            list_visibility: ListVisibility::Administrator,
            wall_member_read: true,
            wall_member_write: true,
        }
    }

    /// Every key goes to members and the list is public.
    pub fn open() -> Self {
        Self {
            join: JoinPolicy::AnyoneMayJoin,
            list_visibility: ListVisibility::Anyone,
            wall_member_read: true,
            wall_member_write: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.wall_member_write && !self.wall_member_read {
            return Err(ProtocolError::Precondition("a writable wall must also be readable by members".into()));
        }
        Ok(())
    }

    /// The `[keys]` of a helo under this policy.
    pub fn granted_keys(&self, list_sym: &SymKey, wall_sym: &SymKey, wall: &KeyPair) -> Vec<GrantedKey> {
        let mut keys = Vec::new();
        if self.list_visibility != ListVisibility::Administrator {
            keys.push(GrantedKey::ListSym(list_sym.clone()));
        }
        if self.wall_member_read {
            keys.push(GrantedKey::WallSym(wall_sym.clone()));
        }
        if self.wall_member_write {
            keys.push(GrantedKey::WallSigning(wall.private.clone()));
        }
        keys
    }
}

/// The full key bundle of a group, as generated by its creator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupKeys {
    pub root: KeyPair,
    pub inbox: KeyPair,
    pub list: KeyPair,
    pub wall: KeyPair,
    pub list_sym: SymKey,
    pub wall_sym: SymKey,
}

impl GroupKeys {
    pub fn generate<R: rand::RngCore + rand::CryptoRng + ?Sized>(rng: &mut R) -> Self {
        Self {
            root: KeyPair::generate(rng),
            inbox: KeyPair::generate(rng),
            list: KeyPair::generate(rng),
            wall: KeyPair::generate(rng),
            list_sym: SymKey::generate(rng),
            wall_sym: SymKey::generate(rng),
        }
    }

    pub fn root_address(&self) -> Address {
        address_of(&self.root.public)
    }

    pub fn inbox_address(&self) -> Address {
        address_of(&self.inbox.public)
    }

    pub fn once_address(&self) -> Address {
        derived_address(&self.inbox.public, 0)
    }

    /// The creator keeps only `K_r^-1`.
    pub fn creator_view(&self, policy: GroupPolicy) -> RoleView {
        RoleView {
            role: Role::Creator,
            root_key: self.root.public.clone(),
            inbox_key: self.inbox.public.clone(),
            list_key: Some(self.list.public.clone()),
            wall_key: Some(self.wall.public.clone()),
            policy: Some(policy),
            root: Some(self.root.clone()),
            ..RoleView::empty(self.root.public.clone(), self.inbox.public.clone())
        }
    }

    /// Keys handed to an administrator over a secure channel.
    pub fn administrator_view(&self, policy: GroupPolicy) -> RoleView {
        RoleView {
            role: Role::Administrator,
            list_key: Some(self.list.public.clone()),
            wall_key: Some(self.wall.public.clone()),
            policy: Some(policy),
            inbox: Some(self.inbox.clone()),
            list: Some(self.list.clone()),
            wall: Some(self.wall.clone()),
            list_sym: Some(self.list_sym.clone()),
            wall_sym: Some(self.wall_sym.clone()),
            ..RoleView::empty(self.root.public.clone(), self.inbox.public.clone())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Creator,
    Administrator,
    Member,
    /// Knows the group's public keys only.
    Outsider,
}

/// What one party knows about one group. Operations check for the keys
/// they need and fail with `AccessDenied` otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleView {
    pub role: Role,
    pub root_key: PublicKey,
    pub inbox_key: PublicKey,
    pub list_key: Option<PublicKey>,
    pub wall_key: Option<PublicKey>,
    pub policy: Option<GroupPolicy>,
    /// Highest helo epoch installed so far.
    pub epoch: u64,
    pub root: Option<KeyPair>,
    pub inbox: Option<KeyPair>,
    pub list: Option<KeyPair>,
    pub wall: Option<KeyPair>,
    pub list_sym: Option<SymKey>,
    pub wall_sym: Option<SymKey>,
    /// Administrator's position in the group inbox.
    pub inbox_cursor: usize,
}

impl RoleView {
    fn empty(root_key: PublicKey, inbox_key: PublicKey) -> Self {
        Self {
            role: Role::Outsider,
            root_key,
            inbox_key,
            list_key: None,
            wall_key: None,
            policy: None,
            epoch: 0,
            root: None,
            inbox: None,
            list: None,
            wall: None,
            list_sym: None,
            wall_sym: None,
            inbox_cursor: 0,
        }
    }

    /// An outsider who only knows where the group lives.
    pub fn outsider(root_key: PublicKey, inbox_key: PublicKey) -> Self {
        Self::empty(root_key, inbox_key)
    }

    pub(crate) fn need_inbox(&self) -> Result<&KeyPair> {
        self.inbox.as_ref().ok_or(ProtocolError::AccessDenied("inbox private key K_i^-1"))
    }

    pub(crate) fn need_list(&self) -> Result<&KeyPair> {
        self.list.as_ref().ok_or(ProtocolError::AccessDenied("list signing key K_l^-1"))
    }

    pub(crate) fn need_list_sym(&self) -> Result<&SymKey> {
        self.list_sym.as_ref().ok_or(ProtocolError::AccessDenied("list key S_l"))
    }

    pub(crate) fn need_wall(&self) -> Result<&KeyPair> {
        self.wall.as_ref().ok_or(ProtocolError::AccessDenied("wall signing key K_w^-1"))
    }

    pub(crate) fn need_wall_sym(&self) -> Result<&SymKey> {
        self.wall_sym.as_ref().ok_or(ProtocolError::AccessDenied("wall key S_w"))
    }

    pub(crate) fn need_wall_key(&self) -> Result<&PublicKey> {
        self.wall_key.as_ref().ok_or(ProtocolError::AccessDenied("wall public key K_w"))
    }

    pub(crate) fn need_policy(&self) -> Result<&GroupPolicy> {
        self.policy.as_ref().ok_or(ProtocolError::AccessDenied("group policy"))
    }

    /// Installs keys received in a helo.
    pub(crate) fn install(&mut self, epoch: u64, list_key: PublicKey, wall_key: PublicKey, keys: Vec<GrantedKey>) {
        self.epoch = epoch;
        self.list_key = Some(list_key);
        self.wall_key = Some(wall_key);
        self.list_sym = None;
        self.wall_sym = None;
        self.wall = None;
        for k in keys {
            match k {
                GrantedKey::ListSym(s) => self.list_sym = Some(s),
                GrantedKey::WallSym(s) => self.wall_sym = Some(s),
                GrantedKey::WallSigning(sk) => self.wall = Some(KeyPair::from_private(sk)),
            }
        }
    }
}

/// Serial-number comparison on the 64-bit counter: `ticket` is at or ahead
/// of `current` when the forward distance is below half the ring.
pub fn ticket_is_fresh(ticket: u64, current: u64) -> bool {
    ticket.wrapping_sub(current) < 1 << 63
}
