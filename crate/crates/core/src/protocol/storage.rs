//! Chunked storage of capture-form structures.
//!
//! Chunk `i` of a structure keyed by `K` is its own capture-form record at
//! `chunk_address(K, i)`. Slot 0 carries the structure counter; every other
//! slot has its own counter because a slot first captured late must start
//! at zero.

use rand::{CryptoRng, RngCore};

use super::{ProtocolError, Result};
use crate::crypto::{chunk_address, sym_decrypt, sym_encrypt, Address, KeyPair, PublicKey, SymKey};
use crate::dht::{GetResult, PutOutcome, RejectReason, Session};
use crate::wire::{chunk_count, encode_capture, join_chunks, split_chunks, Chunk, StructureKind, StructureRecord};

pub const MAX_WRITE_ATTEMPTS: usize = 4;

/// Counter, nonce and tag added by `seal_content`.
const SEAL_OVERHEAD: usize = 8 + 12 + 16;

/// A structure as read back from the DHT, before decryption.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredStructure {
    pub kind: StructureKind,
    pub counter: u64,
    pub blob: Vec<u8>,
    /// Counter of every slot seen, slot 0 first.
    pub slot_counters: Vec<Option<u64>>,
}

impl StoredStructure {
    pub fn chunks(&self) -> usize {
        self.slot_counters.len()
    }
}

/// Newest record at one slot that verifies under `key` with the right
/// kind and sequence number. A captured slot holds one record; a slot an
/// adversary demoted to a raw cell holds many and the last valid one wins.
fn newest_valid(result: &GetResult, key: &PublicKey, kind: StructureKind, seq: u32) -> Option<(StructureRecord, Chunk)> {
    result.values().into_iter().rev().find_map(|v| {
        let rec = StructureRecord::decode(v).ok()?;
        if &rec.clear_key != key || rec.kind != kind {
            return None;
        }
        let chunk = Chunk::from_bytes(&rec.payload).ok()?;
        (chunk.seq == seq).then_some((rec, chunk))
    })
}

pub(crate) fn read_structure(s: &mut Session<'_>, key: &PublicKey, kind: StructureKind) -> Result<Option<StoredStructure>> {
    let first = s.get(&chunk_address(key, 0));
    let Some((rec0, chunk0)) = newest_valid(&first, key, kind, 0) else {
        return Ok(None);
    };
    let total = chunk0.total;
    let mut counters = vec![Some(rec0.counter)];
    let mut chunks = vec![chunk0];
    if total > 1 {
        let addrs: Vec<_> = (1..total).map(|i| chunk_address(key, i)).collect();
        for (i, result) in (1..total).zip(s.get_all(&addrs)) {
            let (rec, chunk) = newest_valid(&result, key, kind, i)
                .ok_or_else(|| ProtocolError::Integrity(format!("{kind:?} chunk {i} of {total} missing")))?;
            if chunk.total != total {
                return Err(ProtocolError::Integrity(format!("{kind:?} chunk {i} belongs to another version")));
            }
            counters.push(Some(rec.counter));
            chunks.push(chunk);
        }
    }
    let blob = join_chunks(chunks)?;
    Ok(Some(StoredStructure { kind, counter: rec0.counter, blob, slot_counters: counters }))
}

/// Builds the PUTs that store `blob` as version `counter`. `known` holds
/// slot counters learnt from an earlier read (`None` = known empty); slots
/// past its end are fetched first.
pub(crate) fn plan_writes(
    s: &mut Session<'_>,
    keypair: &KeyPair,
    kind: StructureKind,
    counter: u64,
    blob: &[u8],
    known: &[Option<u64>],
) -> Result<Vec<(Address, Vec<u8>)>> {
    let chunks = split_chunks(blob, s.capacity())?;
    let mut slots: Vec<Option<u64>> = known.to_vec();
    let first_unknown = known.len().max(1);
    if chunks.len() > first_unknown {
        let seqs: Vec<u32> = (first_unknown as u32..chunks.len() as u32).collect();
        let addrs: Vec<_> = seqs.iter().map(|&i| chunk_address(&keypair.public, i)).collect();
        slots.resize(first_unknown, None);
        for (i, result) in seqs.into_iter().zip(s.get_all(&addrs)) {
            slots.push(newest_valid(&result, &keypair.public, kind, i).map(|(rec, _)| rec.counter));
        }
    }
    Ok(chunks
        .iter()
        .enumerate()
        .map(|(i, chunk)| {
            let c = if i == 0 { counter } else { slots.get(i).copied().flatten().map_or(0, |c| c.wrapping_add(1)) };
            let rec = encode_capture(kind, c, keypair, chunk.to_bytes());
            (chunk_address(&keypair.public, chunk.seq), rec.to_bytes())
        })
        .collect())
}

/// First rejection among `outcomes`, as an error naming `component`.
pub(crate) fn check_outcomes(outcomes: &[PutOutcome], component: &'static str) -> Result<()> {
    match outcomes.iter().find_map(|o| match o {
        PutOutcome::Reject(r) => Some(*r),
        PutOutcome::Ack => None,
    }) {
        None => Ok(()),
        Some(reason) => Err(ProtocolError::Node { component, reason }),
    }
}

/// Stores `blob` as version `counter`; returns the number of chunks.
pub(crate) fn write_structure(
    s: &mut Session<'_>,
    keypair: &KeyPair,
    kind: StructureKind,
    counter: u64,
    blob: &[u8],
    known: &[Option<u64>],
    component: &'static str,
) -> Result<usize> {
    let writes = plan_writes(s, keypair, kind, counter, blob, known)?;
    let outcomes = s.put_all(&writes);
    check_outcomes(&outcomes, component)?;
    Ok(writes.len())
}

/// Chunks needed for `content_len` bytes sealed with `seal_content`.
pub fn sealed_chunk_count(content_len: usize, capacity: usize) -> usize {
    chunk_count(content_len + SEAL_OVERHEAD, capacity)
}

/// Whether an error is a lost race a fresh read-modify-write may fix.
pub(crate) fn is_conflict(e: &ProtocolError) -> bool {
    matches!(
        e,
        ProtocolError::Node { reason: RejectReason::UpdateDenied | RejectReason::CaptureDenied, .. }
    )
}

/// `{c.content}_S`: the counter inside the ciphertext ties every chunk to
/// one version.
pub(crate) fn seal_content<R: RngCore + CryptoRng + ?Sized>(key: &SymKey, counter: u64, content: &[u8], rng: &mut R) -> Vec<u8> {
    let mut plain = Vec::with_capacity(8 + content.len());
    plain.extend_from_slice(&counter.to_be_bytes());
    plain.extend_from_slice(content);
    sym_encrypt(key, &plain, rng)
}

pub(crate) fn open_content(key: &SymKey, stored: &StoredStructure, what: &'static str) -> Result<Vec<u8>> {
    let plain = sym_decrypt(key, &stored.blob).map_err(|_| ProtocolError::Undecryptable(what))?;
    if plain.len() < 8 {
        return Err(ProtocolError::Integrity(format!("{what} plaintext truncated")));
    }
    let inner = u64::from_be_bytes(plain[..8].try_into().expect("8 bytes"));
    if inner != stored.counter {
        return Err(ProtocolError::Integrity(format!(
            "{what} counter {} does not match record counter {}",
            inner, stored.counter
        )));
    }
    Ok(plain[8..].to_vec())
}
