use std::collections::BTreeMap;

use super::codec::{Reader, Writer};
use super::WireError;

/// One fragment of a blob. Encoded as `[4B seq][4B total][4B len][body]`;
/// the header does not count against the per-PUT capacity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub seq: u32,
    pub total: u32,
    pub body: Vec<u8>,
}

impl Chunk {
    pub const HEADER_LEN: usize = 12;

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(self.seq).u32(self.total).bytes(&self.body);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let seq = r.u32()?;
        let total = r.u32()?;
        let body = r.bytes()?.to_vec();
        r.finish()?;
        if seq >= total {
            return Err(WireError::SeqOutOfRange { seq, total });
        }
        Ok(Self { seq, total, body })
    }
}

/// Number of chunks `split_chunks` produces for a blob of `len` bytes.
pub fn chunk_count(len: usize, capacity: usize) -> usize {
    len.div_ceil(capacity.max(1)).max(1)
}

pub fn split_chunks(blob: &[u8], capacity: usize) -> Result<Vec<Chunk>, WireError> {
    if capacity == 0 {
        return Err(WireError::ZeroCapacity);
    }
    let total = u32::try_from(chunk_count(blob.len(), capacity))
        .map_err(|_| WireError::Malformed("too many chunks"))?;
    if blob.is_empty() {
        return Ok(vec![Chunk { seq: 0, total: 1, body: Vec::new() }]);
    }
    Ok(blob
        .chunks(capacity)
        .enumerate()
        .map(|(i, body)| Chunk { seq: i as u32, total, body: body.to_vec() })
        .collect())
}

/// Reassembles a complete chunk set given in any order. Exact duplicates
/// are tolerated; conflicting duplicates are not.
pub fn join_chunks<I: IntoIterator<Item = Chunk>>(chunks: I) -> Result<Vec<u8>, WireError> {
    let mut total = None;
    let mut by_seq: BTreeMap<u32, Vec<u8>> = BTreeMap::new();
    for chunk in chunks {
        match total {
            None => total = Some(chunk.total),
            Some(t) if t != chunk.total => return Err(WireError::InconsistentTotal),
            _ => {}
        }
        if chunk.seq >= chunk.total {
            return Err(WireError::SeqOutOfRange { seq: chunk.seq, total: chunk.total });
        }
        if let Some(prev) = by_seq.get(&chunk.seq) {
            if prev != &chunk.body {
                return Err(WireError::DuplicateChunk(chunk.seq));
            }
            continue;
        }
        by_seq.insert(chunk.seq, chunk.body);
    }
    let total = total.ok_or(WireError::EmptyChunkSet)?;
    let mut out = Vec::new();
    for seq in 0..total {
        out.extend_from_slice(by_seq.get(&seq).ok_or(WireError::MissingChunk(seq))?);
    }
    Ok(out)
}
