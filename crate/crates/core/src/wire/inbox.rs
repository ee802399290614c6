//! Values that live in unverified inbox cells: whole and multipart inbox
//! messages, once-tickets, directory name records and relay envelopes.

use std::collections::BTreeMap;

use rand::{CryptoRng, RngCore};

use super::chunk::{join_chunks, split_chunks, Chunk};
use super::codec::{Reader, Writer};
use super::{RecordType, WireError};
use crate::crypto::{self, pub_decrypt, pub_encrypt, Address, KeyPair, PublicKey, Signature};

/// Set on the tag byte of a multipart fragment.
pub const PART_FLAG: u8 = 0x80;
/// First byte of a Crowds relay envelope.
pub const RELAY_MARKER: u8 = 0x40;

/// A message appended to an inbox: `[1B tag][4B len][body]`. It carries no
/// counter and no clear sender key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InboxMessage {
    pub rtype: RecordType,
    pub body: Vec<u8>,
}

fn inbox_type(tag: u8) -> Result<RecordType, WireError> {
    match RecordType::from_tag(tag)? {
        t @ (RecordType::Once | RecordType::Helo | RecordType::Join | RecordType::Mess) => Ok(t),
        _ => Err(WireError::Malformed("not an inbox message type")),
    }
}

impl InboxMessage {
    pub fn new(rtype: RecordType, body: Vec<u8>) -> Self {
        Self { rtype, body }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(self.rtype.tag()).bytes(&self.body);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let rtype = inbox_type(r.u8()?)?;
        let body = r.bytes()?.to_vec();
        r.finish()?;
        Ok(Self { rtype, body })
    }
}

/// `[1B tag|0x80][8B message id][chunk]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InboxPart {
    pub rtype: RecordType,
    pub message_id: u64,
    pub chunk: Chunk,
}

impl InboxPart {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(self.rtype.tag() | PART_FLAG).u64(self.message_id).raw(&self.chunk.to_bytes());
        w.finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InboxValue {
    Whole(InboxMessage),
    Part(InboxPart),
}

impl InboxValue {
    pub fn parse(bytes: &[u8]) -> Result<Self, WireError> {
        let first = *bytes.first().ok_or(WireError::Truncated)?;
        if first & PART_FLAG == 0 {
            return InboxMessage::from_bytes(bytes).map(Self::Whole);
        }
        let mut r = Reader::new(bytes);
        let rtype = inbox_type(r.u8()? & !PART_FLAG)?;
        let message_id = r.u64()?;
        let chunk = Chunk::from_bytes(&bytes[r.position()..])?;
        Ok(Self::Part(InboxPart { rtype, message_id, chunk }))
    }

    pub fn record_type(&self) -> RecordType {
        match self {
            Self::Whole(m) => m.rtype,
            Self::Part(p) => p.rtype,
        }
    }

    /// Size that counts against the per-PUT capacity.
    pub fn body_len(&self) -> usize {
        match self {
            Self::Whole(m) => m.body.len(),
            Self::Part(p) => p.chunk.body.len(),
        }
    }
}

/// Frames a message for one inbox cell, splitting it into parts when the
/// body exceeds `capacity`.
pub fn frame_inbox<R: RngCore + ?Sized>(msg: &InboxMessage, capacity: usize, rng: &mut R) -> Vec<Vec<u8>> {
    if msg.body.len() <= capacity {
        return vec![msg.to_bytes()];
    }
    let message_id = rng.next_u64();
    split_chunks(&msg.body, capacity)
        .expect("capacity checked non-zero by the caller")
        .into_iter()
        .map(|chunk| InboxPart { rtype: msg.rtype, message_id, chunk }.to_bytes())
        .collect()
}

/// Inbox cell contents after multipart reassembly.
#[derive(Debug, Default, Clone)]
pub struct ReassembledInbox {
    /// Complete messages with the cell index at which they completed.
    pub messages: Vec<(usize, InboxMessage)>,
    /// Lowest cell index belonging to a still-incomplete multipart message.
    pub pending_from: Option<usize>,
    /// Entries that are not inbox values at all (spam, stray records).
    pub unparsed: usize,
}

impl ReassembledInbox {
    /// Index a reader can resume from without losing incomplete messages.
    pub fn resume_index(&self, len: usize) -> usize {
        self.pending_from.unwrap_or(len)
    }
}

pub fn reassemble_inbox(entries: &[Vec<u8>]) -> ReassembledInbox {
    let mut out = ReassembledInbox::default();
    let mut partial: BTreeMap<(u8, u64), (usize, Vec<Chunk>)> = BTreeMap::new();
    for (idx, entry) in entries.iter().enumerate() {
        match InboxValue::parse(entry) {
            Ok(InboxValue::Whole(m)) => out.messages.push((idx, m)),
            Ok(InboxValue::Part(p)) => {
                let slot = partial.entry((p.rtype.tag(), p.message_id)).or_insert((idx, Vec::new()));
                let total = p.chunk.total as usize;
                if !slot.1.iter().any(|c| c.seq == p.chunk.seq) {
                    slot.1.push(p.chunk);
                }
                if slot.1.len() == total {
                    let (_, chunks) = partial.remove(&(p.rtype.tag(), p.message_id)).expect("present");
                    match join_chunks(chunks) {
                        Ok(body) => out.messages.push((idx, InboxMessage { rtype: p.rtype, body })),
                        Err(_) => out.unparsed += 1,
                    }
                }
            }
            Err(_) => out.unparsed += 1,
        }
    }
    out.pending_from = partial.values().map(|(first, _)| *first).min();
    out
}

fn once_content(counter: u64) -> [u8; 9] {
    let mut content = [0u8; 9];
    content[0] = RecordType::Once.tag();
    content[1..].copy_from_slice(&counter.to_be_bytes());
    content
}

/// `{once.{c_l}_{K_l^-1}}_{K_l}`: the list counter signed and encrypted
/// under the list key pair.
pub fn make_once_ticket<R: RngCore + CryptoRng + ?Sized>(counter: u64, list: &KeyPair, rng: &mut R) -> InboxMessage {
    let content = once_content(counter);
    let mut w = Writer::new();
    w.raw(&content).signature(&list.sign(&content));
    InboxMessage::new(RecordType::Once, pub_encrypt(&list.public, w.as_slice(), rng))
}

pub fn open_once_ticket(ticket: &InboxMessage, list: &KeyPair) -> Result<u64, WireError> {
    if ticket.rtype != RecordType::Once {
        return Err(WireError::Malformed("not a once ticket"));
    }
    let plain = pub_decrypt(&list.private, &ticket.body).map_err(|_| WireError::Undecryptable)?;
    let mut r = Reader::new(&plain);
    let content = r.take(9)?;
    let sig = r.signature()?;
    r.finish()?;
    if content[0] != RecordType::Once.tag() {
        return Err(WireError::Malformed("once ticket tag"));
    }
    if !crypto::verify(&list.public, content, &sig) {
        return Err(WireError::BadSignature);
    }
    Ok(u64::from_be_bytes(content[1..].try_into().expect("8 bytes")))
}

/// Directory entry `{name.K_r}_{K_r^-1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NameRecord {
    pub name: String,
    pub root_key: PublicKey,
    pub signature: Signature,
}

impl NameRecord {
    fn prefix(name: &str, root_key: &PublicKey) -> Writer {
        let mut w = Writer::new();
        w.u8(RecordType::Name.tag()).bytes(name.as_bytes()).key(root_key);
        w
    }

    pub fn sign(name: &str, root: &KeyPair) -> Self {
        let signature = root.sign(Self::prefix(name, &root.public).as_slice());
        Self { name: name.to_owned(), root_key: root.public.clone(), signature }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Self::prefix(&self.name, &self.root_key);
        w.signature(&self.signature);
        w.finish()
    }

    /// Parses and checks the self-signature against the embedded key.
    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        if r.u8()? != RecordType::Name.tag() {
            return Err(WireError::Malformed("not a name record"));
        }
        let name = String::from_utf8(r.bytes()?.to_vec()).map_err(|_| WireError::Malformed("name is not utf-8"))?;
        let root_key = r.key()?;
        let signature = r.signature()?;
        r.finish()?;
        if !crypto::verify(&root_key, Self::prefix(&name, &root_key).as_slice(), &signature) {
            return Err(WireError::BadSignature);
        }
        Ok(Self { name, root_key, signature })
    }
}

/// `h(K_i).{{mess.m}_{K_p^-1}}_{K_i}` as carried between relays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayEnvelope {
    pub destination: Address,
    pub inner: Vec<u8>,
}

impl RelayEnvelope {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(RELAY_MARKER).raw(self.destination.as_bytes()).bytes(&self.inner);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        if r.u8()? != RELAY_MARKER {
            return Err(WireError::Malformed("not a relay envelope"));
        }
        let destination = Address::from_bytes(r.take(20)?).expect("20 bytes");
        let inner = r.bytes()?.to_vec();
        r.finish()?;
        Ok(Self { destination, inner })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::gen_keypair;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn once_ticket_roundtrip() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let kl = gen_keypair(&mut rng);
        let ticket = make_once_ticket(5, &kl, &mut rng);
        assert_eq!(open_once_ticket(&ticket, &kl).unwrap(), 5);
        for _ in 0..100 {
            let c: u64 = rng.gen();
            let t = make_once_ticket(c, &kl, &mut rng);
            let t = InboxMessage::from_bytes(&t.to_bytes()).unwrap();
            assert_eq!(open_once_ticket(&t, &kl).unwrap(), c);
        }
    }

    #[test]
    fn once_ticket_wrong_key_or_tamper() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let kl = gen_keypair(&mut rng);
        let other = gen_keypair(&mut rng);
        let ticket = make_once_ticket(9, &kl, &mut rng);
        assert_eq!(open_once_ticket(&ticket, &other), Err(WireError::Undecryptable));
        let mut tampered = ticket.clone();
        let n = tampered.body.len();
        tampered.body[n - 1] ^= 1;
        assert!(open_once_ticket(&tampered, &kl).is_err());
        // Signed by a different key but encrypted to K_l.
        let content = once_content(9);
        let mut w = Writer::new();
        w.raw(&content).signature(&other.sign(&content));
        let forged = InboxMessage::new(RecordType::Once, pub_encrypt(&kl.public, w.as_slice(), &mut rng));
        assert_eq!(open_once_ticket(&forged, &kl), Err(WireError::BadSignature));
    }

    #[test]
    fn multipart_reassembles_in_order() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let big = InboxMessage::new(RecordType::Mess, (0..1500u32).map(|i| i as u8).collect());
        let small = InboxMessage::new(RecordType::Mess, b"hi".to_vec());
        let parts = frame_inbox(&big, 512, &mut rng);
        assert_eq!(parts.len(), 3);
        let mut cell = vec![parts[0].clone(), small.to_bytes(), b"junk".to_vec()];
        let partial = reassemble_inbox(&cell);
        assert_eq!(partial.messages.len(), 1);
        assert_eq!(partial.pending_from, Some(0));
        assert_eq!(partial.unparsed, 1);
        cell.extend(parts[1..].iter().cloned());
        let done = reassemble_inbox(&cell);
        assert_eq!(done.pending_from, None);
        assert_eq!(done.messages[1], (4, big));
    }

    #[test]
    fn name_record_checks_signature() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let kr = gen_keypair(&mut rng);
        let rec = NameRecord::sign("demo", &kr);
        let back = NameRecord::decode(&rec.to_bytes()).unwrap();
        assert_eq!(back.root_key, kr.public);
        let mut bytes = rec.to_bytes();
        bytes[6] ^= 1;
        assert!(NameRecord::decode(&bytes).is_err());
    }

    #[test]
    fn relay_envelope_roundtrip() {
        let env = RelayEnvelope { destination: Address([9; 20]), inner: vec![1, 2, 3] };
        assert_eq!(RelayEnvelope::from_bytes(&env.to_bytes()).unwrap(), env);
        assert!(InboxValue::parse(&env.to_bytes()).is_err());
    }
}
