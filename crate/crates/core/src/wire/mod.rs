//! Canonical byte encodings for every record the protocol stores in the DHT.
//!
//! All integers are big-endian and every variable-length field carries a
//! 4-byte length prefix. Capture-form structure records are laid out as
//!
//! ```text
//! [1B tag][8B counter][4B key len][key][4B payload len][payload][4B sig len][sig]
//! ```
//!
//! with the signature covering every byte before the signature length.

mod body;
mod chunk;
pub(crate) mod codec;
mod inbox;

use thiserror::Error;

use crate::crypto::{self, CryptoError, KeyPair, PublicKey, Signature, SymKey};
use codec::{Reader, Writer};

pub use body::{
    open_blob, open_helo, open_join, open_private_message, seal_helo, seal_join,
    seal_private_message, sign_blob, GrantedKey, HeloBody, JoinRequest, MemberEntry, MemberList,
};
pub use chunk::{chunk_count, join_chunks, split_chunks, Chunk};
pub use inbox::{
    frame_inbox, make_once_ticket, open_once_ticket, reassemble_inbox, InboxMessage, InboxPart,
    InboxValue, NameRecord, ReassembledInbox, RelayEnvelope, PART_FLAG, RELAY_MARKER,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("value truncated")]
    Truncated,
    #[error("trailing bytes after value")]
    TrailingBytes,
    #[error("malformed value: {0}")]
    Malformed(&'static str),
    #[error("unknown record tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("tag 0x{0:02x} is not a capture-form structure")]
    NotCaptureForm(u8),
    #[error("signature verification failed")]
    BadSignature,
    #[error("cannot decrypt value")]
    Undecryptable,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("chunk capacity must be at least one byte")]
    ZeroCapacity,
    #[error("no chunks to reassemble")]
    EmptyChunkSet,
    #[error("chunk {0} missing")]
    MissingChunk(u32),
    #[error("chunk {0} appears twice with different bodies")]
    DuplicateChunk(u32),
    #[error("chunks disagree on the total count")]
    InconsistentTotal,
    #[error("chunk sequence {seq} out of range for total {total}")]
    SeqOutOfRange { seq: u32, total: u32 },
}

/// Message-type tags. Values are part of the wire format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum RecordType {
    Root = 0x01,
    List = 0x02,
    Wall = 0x03,
    Once = 0x04,
    Helo = 0x05,
    Name = 0x06,
    Join = 0x07,
    Mess = 0x08,
}

impl RecordType {
    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Result<Self, WireError> {
        Ok(match tag {
            0x01 => Self::Root,
            0x02 => Self::List,
            0x03 => Self::Wall,
            0x04 => Self::Once,
            0x05 => Self::Helo,
            0x06 => Self::Name,
            0x07 => Self::Join,
            0x08 => Self::Mess,
            other => return Err(WireError::UnknownTag(other)),
        })
    }
}

/// The three self-signed structure types subject to capture and update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureKind {
    Root,
    List,
    Wall,
}

impl StructureKind {
    pub fn record_type(self) -> RecordType {
        match self {
            Self::Root => RecordType::Root,
            Self::List => RecordType::List,
            Self::Wall => RecordType::Wall,
        }
    }

    pub fn from_record_type(rtype: RecordType) -> Option<Self> {
        match rtype {
            RecordType::Root => Some(Self::Root),
            RecordType::List => Some(Self::List),
            RecordType::Wall => Some(Self::Wall),
            _ => None,
        }
    }
}

/// `{type.c.K.payload}_{K^-1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructureRecord {
    pub kind: StructureKind,
    pub counter: u64,
    pub clear_key: PublicKey,
    pub payload: Vec<u8>,
    pub signature: Signature,
}

fn signed_prefix(kind: StructureKind, counter: u64, key: &PublicKey, payload: &[u8]) -> Writer {
    let mut w = Writer::new();
    w.u8(kind.record_type().tag()).u64(counter).key(key).bytes(payload);
    w
}

/// Builds a capture-form record signed with `keypair.private`.
pub fn encode_capture(kind: StructureKind, counter: u64, keypair: &KeyPair, payload: Vec<u8>) -> StructureRecord {
    let prefix = signed_prefix(kind, counter, &keypair.public, &payload);
    let signature = keypair.sign(prefix.as_slice());
    StructureRecord { kind, counter, clear_key: keypair.public.clone(), payload, signature }
}

impl StructureRecord {
    pub fn record_type(&self) -> RecordType {
        self.kind.record_type()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = signed_prefix(self.kind, self.counter, &self.clear_key, &self.payload);
        w.signature(&self.signature);
        w.finish()
    }

    /// Parses the layout without checking the signature. Storing nodes use
    /// this to tell "not capture-form" apart from "capture-form but forged".
    pub fn parse(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let tag = r.u8()?;
        let rtype = RecordType::from_tag(tag)?;
        let kind = StructureKind::from_record_type(rtype).ok_or(WireError::NotCaptureForm(tag))?;
        let counter = r.u64()?;
        let clear_key = r.key()?;
        let payload = r.bytes()?.to_vec();
        let signature = r.signature()?;
        r.finish()?;
        Ok(Self { kind, counter, clear_key, payload, signature })
    }

    /// Parses and verifies the self-signature.
    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let record = Self::parse(bytes)?;
        if record.verify() {
            Ok(record)
        } else {
            Err(WireError::BadSignature)
        }
    }

    pub fn verify(&self) -> bool {
        let prefix = signed_prefix(self.kind, self.counter, &self.clear_key, &self.payload);
        crypto::verify(&self.clear_key, prefix.as_slice(), &self.signature)
    }
}

/// Keys a root may publish in clear, e.g. the list keys of a group whose
/// member list is visible to anyone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PublishedKey {
    ListPublic(PublicKey),
    ListSym(SymKey),
}

impl PublishedKey {
    fn kind(&self) -> u8 {
        match self {
            Self::ListPublic(_) => 1,
            Self::ListSym(_) => 2,
        }
    }

    fn material(&self) -> Vec<u8> {
        match self {
            Self::ListPublic(k) => k.as_bytes().to_vec(),
            Self::ListSym(k) => k.as_bytes().to_vec(),
        }
    }

    fn parse(kind: u8, bytes: &[u8]) -> Result<Self, WireError> {
        match kind {
            1 => Ok(Self::ListPublic(PublicKey::from_bytes(bytes)?)),
            2 => Ok(Self::ListSym(SymKey::from_bytes(bytes)?)),
            _ => Err(WireError::Malformed("unknown published key kind")),
        }
    }
}

/// Verified contents of a group root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootInfo {
    pub counter: u64,
    pub root_key: PublicKey,
    pub inbox_key: PublicKey,
    pub published: Vec<PublishedKey>,
}

impl RootInfo {
    pub fn published_list(&self) -> (Option<PublicKey>, Option<SymKey>) {
        let mut key = None;
        let mut sym = None;
        for p in &self.published {
            match p {
                PublishedKey::ListPublic(k) => key = Some(k.clone()),
                PublishedKey::ListSym(s) => sym = Some(s.clone()),
            }
        }
        (key, sym)
    }
}

/// Inner part of the root, `{root.c_r.K_r.K_i[.extra]}_{K_i^-1}`.
pub fn root_payload(counter: u64, root_key: &PublicKey, inbox: &KeyPair, extra: &[PublishedKey]) -> Vec<u8> {
    let mut inner = Writer::new();
    inner
        .u8(RecordType::Root.tag())
        .u64(counter)
        .key(root_key)
        .key(&inbox.public)
        .u32(codec::len_u32(extra.len()));
    for key in extra {
        inner.u8(key.kind()).bytes(&key.material());
    }
    sign_blob(inbox, inner.as_slice())
}

/// Double-signed root: inner signature by `K_i^-1`, outer capture form by
/// `K_r^-1`. Like every stored structure the payload is a chunk frame; a
/// root always fits in one chunk.
pub fn encode_root(counter: u64, root: &KeyPair, inbox: &KeyPair, extra: &[PublishedKey]) -> StructureRecord {
    let body = root_payload(counter, &root.public, inbox, extra);
    encode_capture(StructureKind::Root, counter, root, Chunk { seq: 0, total: 1, body }.to_bytes())
}

/// Checks the inner signature and that the inner fields agree with the
/// outer record (`expected_root` and `counter`).
pub fn decode_root_payload(payload: &[u8], expected_root: &PublicKey, counter: u64) -> Result<RootInfo, WireError> {
    let (inner, sig) = open_blob(payload)?;
    let mut r = Reader::new(inner);
    if r.u8()? != RecordType::Root.tag() {
        return Err(WireError::Malformed("root inner tag"));
    }
    let inner_counter = r.u64()?;
    let root_key = r.key()?;
    let inbox_key = r.key()?;
    let n = r.u32()?;
    let mut published = Vec::new();
    for _ in 0..n {
        let kind = r.u8()?;
        published.push(PublishedKey::parse(kind, r.bytes()?)?);
    }
    r.finish()?;
    if !crypto::verify(&inbox_key, inner, &sig) {
        return Err(WireError::BadSignature);
    }
    if &root_key != expected_root || inner_counter != counter {
        return Err(WireError::Malformed("root inner fields disagree with outer record"));
    }
    Ok(RootInfo { counter, root_key, inbox_key, published })
}

/// Full verification of a group root record.
pub fn verify_root(record: &StructureRecord) -> Result<RootInfo, WireError> {
    if record.kind != StructureKind::Root || !record.verify() {
        return Err(WireError::BadSignature);
    }
    let chunk = Chunk::from_bytes(&record.payload)?;
    if chunk.total != 1 {
        return Err(WireError::Malformed("root spans several chunks"));
    }
    decode_root_payload(&chunk.body, &record.clear_key, record.counter)
}
