//! Binary snapshot of the full simulator state.
//!
//! Layout: `"PPGS"`, u32 version, config (JSON, length-prefixed), clock,
//! op count, RNG seed and word position, then per address
//! `[20B addr][1B state tag][record bytes | u32 n, n entries]`, followed by
//! behaviour rules (JSON) and the observation log.

use std::path::Path;

use rand_chacha::ChaCha20Rng;
use rand::SeedableRng;

use super::{AddressState, Observation, Op, Requester, SimConfig, SimTime, Simulator};
use crate::crypto::Address;
use crate::wire::codec::{len_u32, Reader, Writer};
use crate::wire::{StructureRecord, WireError};

const MAGIC: &[u8; 4] = b"PPGS";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("snapshot i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a simulator snapshot")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    Version(u32),
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
}

impl From<WireError> for SnapshotError {
    fn from(e: WireError) -> Self {
        Self::Corrupt(e.to_string())
    }
}

impl From<serde_json::Error> for SnapshotError {
    fn from(e: serde_json::Error) -> Self {
        Self::Corrupt(e.to_string())
    }
}

fn op_tag(op: Op) -> u8 {
    match op {
        Op::Put => 1,
        Op::Get => 2,
        Op::Forward => 3,
    }
}

fn read_address(r: &mut Reader<'_>) -> Result<Address, SnapshotError> {
    Ok(Address::from_bytes(r.take(20)?).expect("20 bytes"))
}

impl Simulator {
    pub fn snapshot(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(MAGIC).u32(VERSION);
        w.bytes(&serde_json::to_vec(&self.config).expect("config serializes"));
        w.u64(self.clock.0).u64(self.ops);
        w.raw(&self.rng.get_seed()).raw(&self.rng.get_word_pos().to_be_bytes());
        w.u32(len_u32(self.state.len()));
        for (addr, state) in &self.state {
            w.raw(addr.as_bytes());
            match state {
                AddressState::Empty => unreachable!("empty states are never stored"),
                AddressState::Captured { record } => {
                    w.u8(1).bytes(&record.to_bytes());
                }
                AddressState::RawCell { entries } => {
                    w.u8(2).u32(len_u32(entries.len()));
                    for e in entries {
                        w.bytes(e);
                    }
                }
            }
        }
        w.bytes(&serde_json::to_vec(&self.rules).expect("rules serialize"));
        w.u32(len_u32(self.log.len()));
        for o in &self.log {
            w.u64(o.time.0).u8(op_tag(o.op)).raw(o.address.as_bytes());
            match o.requester {
                Requester::Client(id) => w.u8(1).u64(id),
                Requester::Node(a) => w.u8(2).raw(a.as_bytes()),
            };
            w.u32(len_u32(o.values.len()));
            for v in &o.values {
                w.bytes(v);
            }
        }
        w.finish()
    }

    pub fn restore(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let mut r = Reader::new(bytes);
        if r.take(4).map_err(|_| SnapshotError::BadMagic)? != MAGIC {
            return Err(SnapshotError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(SnapshotError::Version(version));
        }
        let config: SimConfig = serde_json::from_slice(r.bytes()?)?;
        let mut sim = Simulator::new(config).map_err(SnapshotError::Corrupt)?;
        sim.clock = SimTime(r.u64()?);
        sim.ops = r.u64()?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let word_pos = u128::from_be_bytes(r.take(16)?.try_into().expect("16 bytes"));
        sim.rng = ChaCha20Rng::from_seed(seed);
        sim.rng.set_word_pos(word_pos);
        for _ in 0..r.u32()? {
            let addr = read_address(&mut r)?;
            let state = match r.u8()? {
                1 => AddressState::Captured { record: StructureRecord::parse(r.bytes()?)? },
                2 => {
                    let n = r.u32()?;
                    let mut entries = Vec::new();
                    for _ in 0..n {
                        entries.push(r.bytes()?.to_vec());
                    }
                    AddressState::RawCell { entries }
                }
                t => return Err(SnapshotError::Corrupt(format!("state tag {t}"))),
            };
            sim.state.insert(addr, state);
        }
        sim.rules = serde_json::from_slice(r.bytes()?)?;
        for _ in 0..r.u32()? {
            let time = SimTime(r.u64()?);
            let op = match r.u8()? {
                1 => Op::Put,
                2 => Op::Get,
                3 => Op::Forward,
                t => return Err(SnapshotError::Corrupt(format!("op tag {t}"))),
            };
            let address = read_address(&mut r)?;
            let requester = match r.u8()? {
                1 => Requester::Client(r.u64()?),
                2 => Requester::Node(read_address(&mut r)?),
                t => return Err(SnapshotError::Corrupt(format!("requester tag {t}"))),
            };
            let n = r.u32()?;
            let mut values = Vec::new();
            for _ in 0..n {
                values.push(r.bytes()?.to_vec());
            }
            sim.log.push(Observation { time, op, address, values, requester });
        }
        r.finish()?;
        Ok(sim)
    }

    pub fn save(&self, path: &Path) -> Result<(), SnapshotError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.snapshot())?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SnapshotError> {
        Self::restore(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{AddressSelector, Dht, NodeBehavior};
    use super::*;
    use crate::crypto::{address_of, gen_keypair};
    use crate::wire::{encode_capture, Chunk, StructureKind};

    fn scripted(seed: u64) -> Simulator {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut sim = Simulator::new(SimConfig::with_seed(seed)).unwrap();
        sim.install_behavior(AddressSelector::All, NodeBehavior::PassiveObserver);
        let kp = gen_keypair(&mut rng);
        let rec = encode_capture(StructureKind::Wall, 0, &kp, Chunk { seq: 0, total: 1, body: b"w".to_vec() }.to_bytes());
        let who = Requester::Client(1);
        sim.put(&address_of(&kp.public), &rec.to_bytes(), SimTime(5), who);
        sim.put(&Address([4; 20]), b"raw-1", SimTime(6), Requester::Node(Address([8; 20])));
        sim.put(&Address([4; 20]), b"raw-2", SimTime(7), who);
        sim.get(&Address([4; 20]), SimTime(8), who);
        sim
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let mut sim = scripted(11);
        let bytes = sim.snapshot();
        let mut back = Simulator::restore(&bytes).unwrap();
        assert_eq!(back.snapshot(), bytes);
        for (addr, state) in sim.addresses() {
            assert_eq!(back.state(addr), state);
        }
        assert_eq!(back.observations(), sim.observations());
        // The RNG resumes where it stopped.
        let a = sim.get(&Address([4; 20]), SimTime(9), Requester::Client(0));
        let b = back.get(&Address([4; 20]), SimTime(9), Requester::Client(0));
        assert_eq!(a, b);
    }

    #[test]
    fn equal_seeds_give_identical_snapshots() {
        assert_eq!(scripted(3).snapshot(), scripted(3).snapshot());
        assert_ne!(scripted(3).snapshot(), scripted(4).snapshot());
    }

    #[test]
    fn corrupt_input_fails() {
        let bytes = scripted(1).snapshot();
        assert!(matches!(Simulator::restore(b"nope"), Err(SnapshotError::BadMagic)));
        assert!(Simulator::restore(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Simulator::restore(&extra).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sim.bin");
        let sim = scripted(2);
        sim.save(&path).unwrap();
        assert_eq!(Simulator::load(&path).unwrap().snapshot(), sim.snapshot());
    }
}
