//! Passphrase-encrypted store of group keys, role views and principals.
//!
//! File layout: `"PPGK"`, u32 version, 16-byte salt, u32 PBKDF2 rounds,
//! then the JSON document sealed with ChaCha20-Poly1305 under
//! PBKDF2-HMAC-SHA256(passphrase, salt).

use std::collections::BTreeMap;
use std::path::Path;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::{GroupKeys, GroupPolicy, PrincipalIdentity, RoleView};
use crate::crypto::{sym_decrypt, sym_encrypt, SymKey};

const MAGIC: &[u8; 4] = b"PPGK";
const VERSION: u32 = 1;
pub const DEFAULT_ROUNDS: u32 = 100_000;

#[derive(Debug, thiserror::Error)]
pub enum KeystoreError {
    #[error("keystore i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a keystore file")]
    BadMagic,
    #[error("unsupported keystore version {0}")]
    Version(u32),
    #[error("wrong passphrase or corrupted keystore")]
    Decrypt,
    #[error("keystore content: {0}")]
    Format(#[from] serde_json::Error),
}

/// A group as known locally.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub policy: GroupPolicy,
    /// Present for groups created here.
    pub keys: Option<GroupKeys>,
    /// Administrator state, including the inbox cursor and key epoch.
    pub admin: Option<RoleView>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keystore {
    pub groups: BTreeMap<String, GroupRecord>,
    pub principals: BTreeMap<String, PrincipalIdentity>,
}

fn derive_key(passphrase: &str, salt: &[u8], rounds: u32) -> SymKey {
    let mut key = [0u8; 32];
    pbkdf2::pbkdf2_hmac::<Sha256>(passphrase.as_bytes(), salt, rounds, &mut key);
    SymKey::from_bytes(&key).expect("32 bytes")
}

impl Keystore {
    pub fn seal<R: RngCore + CryptoRng + ?Sized>(&self, passphrase: &str, rounds: u32, rng: &mut R) -> Vec<u8> {
        let mut salt = [0u8; 16];
        rng.fill_bytes(&mut salt);
        let key = derive_key(passphrase, &salt, rounds);
        let json = serde_json::to_vec(self).expect("keystore serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_be_bytes());
        out.extend_from_slice(&salt);
        out.extend_from_slice(&rounds.to_be_bytes());
        out.extend_from_slice(&sym_encrypt(&key, &json, rng));
        out
    }

    pub fn open(bytes: &[u8], passphrase: &str) -> Result<Self, KeystoreError> {
        if bytes.len() < 28 || &bytes[..4] != MAGIC {
            return Err(KeystoreError::BadMagic);
        }
        let version = u32::from_be_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(KeystoreError::Version(version));
        }
        let salt = &bytes[8..24];
        let rounds = u32::from_be_bytes(bytes[24..28].try_into().expect("4 bytes"));
        let key = derive_key(passphrase, salt, rounds);
        let json = sym_decrypt(&key, &bytes[28..]).map_err(|_| KeystoreError::Decrypt)?;
        Ok(serde_json::from_slice(&json)?)
    }

    pub fn save<R: RngCore + CryptoRng + ?Sized>(&self, path: &Path, passphrase: &str, rng: &mut R) -> Result<(), KeystoreError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.seal(passphrase, DEFAULT_ROUNDS, rng))?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// Loads `path`, or returns an empty store when it does not exist.
    pub fn load_or_default(path: &Path, passphrase: &str) -> Result<Self, KeystoreError> {
        match std::fs::read(path) {
            Ok(bytes) => Self::open(&bytes, passphrase),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e.into()),
        }
    }
}
