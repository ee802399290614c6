//! Key generation, signatures, symmetric and hybrid public-key encryption,
//! and cryptographically generated DHT addresses.
//!
//! A [`KeyPair`] bundles an Ed25519 signing pair with an X25519 agreement
//! pair so the same structure key can both sign records and receive
//! encrypted messages. The public half is the 64-byte concatenation
//! `ed25519_public || x25519_public`; its canonical encoding (4-byte
//! big-endian length followed by the raw bytes) is what gets hashed into
//! an [`Address`].

use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;
use x25519_dalek::{PublicKey as DhPublic, StaticSecret};

pub const PUBLIC_KEY_LEN: usize = 64;
pub const PRIVATE_KEY_LEN: usize = 64;
pub const SIGNATURE_LEN: usize = 64;
pub const SYM_KEY_LEN: usize = 32;
pub const ADDRESS_LEN: usize = 20;

const NONCE_LEN: usize = 12;
const TAG_LEN: usize = 16;
const DH_LEN: usize = 32;
const HYBRID_INFO: &[u8] = b"ppgm hybrid v1";

// Hash-input domain separators.
const DOMAIN_ADDRESS: u8 = 0x01;
const DOMAIN_DERIVED: u8 = 0x02;
const DOMAIN_DIRECTORY: u8 = 0x03;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("malformed key encoding: {0}")]
    MalformedKey(&'static str),
    #[error("decryption failed")]
    Decryption,
    #[error("ciphertext too short")]
    Truncated,
}

/// Public half of a structure or principal key.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey([u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let raw: [u8; PUBLIC_KEY_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::MalformedKey("public key must be 64 bytes"))?;
        let sign: [u8; 32] = raw[..32].try_into().expect("split");
        VerifyingKey::from_bytes(&sign)
            .map_err(|_| CryptoError::MalformedKey("invalid signing point"))?;
        Ok(Self(raw))
    }

    pub fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.0
    }

    /// Canonical encoding: 4-byte big-endian length, then the raw key.
    pub fn canonical(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + PUBLIC_KEY_LEN);
        out.extend_from_slice(&(PUBLIC_KEY_LEN as u32).to_be_bytes());
        out.extend_from_slice(&self.0);
        out
    }

    /// Parses a canonical encoding and returns the key and consumed length.
    pub fn from_canonical(bytes: &[u8]) -> Result<(Self, usize), CryptoError> {
        if bytes.len() < 4 {
            return Err(CryptoError::MalformedKey("truncated length prefix"));
        }
        let len = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
        if len != PUBLIC_KEY_LEN || bytes.len() < 4 + len {
            return Err(CryptoError::MalformedKey("bad length prefix"));
        }
        Ok((Self::from_bytes(&bytes[4..4 + len])?, 4 + len))
    }

    fn verifying_key(&self) -> VerifyingKey {
        VerifyingKey::from_bytes(self.0[..32].try_into().expect("split"))
            .expect("validated at construction")
    }

    fn dh_public(&self) -> DhPublic {
        let raw: [u8; 32] = self.0[32..].try_into().expect("split");
        DhPublic::from(raw)
    }

    /// Short hex prefix for logs and reports.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..6])
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.short())
    }
}

/// Private half. Never printed.
#[derive(Clone, PartialEq, Eq)]
pub struct PrivateKey([u8; PRIVATE_KEY_LEN]);

impl PrivateKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let raw: [u8; PRIVATE_KEY_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::MalformedKey("private key must be 64 bytes"))?;
        Ok(Self(raw))
    }

    pub fn as_bytes(&self) -> &[u8; PRIVATE_KEY_LEN] {
        &self.0
    }

    fn signing_key(&self) -> SigningKey {
        SigningKey::from_bytes(self.0[..32].try_into().expect("split"))
    }

    fn dh_secret(&self) -> StaticSecret {
        let raw: [u8; 32] = self.0[32..].try_into().expect("split");
        StaticSecret::from(raw)
    }

    pub fn public_key(&self) -> PublicKey {
        let mut raw = [0u8; PUBLIC_KEY_LEN];
        raw[..32].copy_from_slice(self.signing_key().verifying_key().as_bytes());
        raw[32..].copy_from_slice(DhPublic::from(&self.dh_secret()).as_bytes());
        PublicKey(raw)
    }
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PrivateKey(..)")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyPair {
    pub public: PublicKey,
    pub private: PrivateKey,
}

impl KeyPair {
    pub fn generate<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Self {
        let mut raw = [0u8; PRIVATE_KEY_LEN];
        rng.fill_bytes(&mut raw);
        Self::from_private(PrivateKey(raw))
    }

    pub fn from_private(private: PrivateKey) -> Self {
        Self { public: private.public_key(), private }
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        sign(&self.private, message)
    }
}

/// Generates a fresh key pair; reproducible for a seeded `rng`.
pub fn gen_keypair<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> KeyPair {
    KeyPair::generate(rng)
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl Signature {
    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(Self)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", hex::encode(&self.0[..6]))
    }
}

pub fn sign(sk: &PrivateKey, message: &[u8]) -> Signature {
    Signature(sk.signing_key().sign(message).to_bytes())
}

pub fn verify(pk: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    pk.verifying_key().verify(message, &sig).is_ok()
}

#[derive(Clone, PartialEq, Eq)]
pub struct SymKey([u8; SYM_KEY_LEN]);

impl SymKey {
    pub fn generate<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Self {
        let mut raw = [0u8; SYM_KEY_LEN];
        rng.fill_bytes(&mut raw);
        Self(raw)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        bytes
            .try_into()
            .map(Self)
            .map_err(|_| CryptoError::MalformedKey("symmetric key must be 32 bytes"))
    }

    pub fn as_bytes(&self) -> &[u8; SYM_KEY_LEN] {
        &self.0
    }
}

impl fmt::Debug for SymKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SymKey(..)")
    }
}

/// Output layout: `nonce(12) || ciphertext || tag(16)`.
pub fn sym_encrypt<R: RngCore + CryptoRng + ?Sized>(key: &SymKey, message: &[u8], rng: &mut R) -> Vec<u8> {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    aead_seal(&key.0, &nonce, message)
}

pub fn sym_decrypt(key: &SymKey, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    aead_open(&key.0, ciphertext)
}

fn aead_seal(key: &[u8; 32], nonce: &[u8; NONCE_LEN], message: &[u8]) -> Vec<u8> {
    let cipher = ChaCha20Poly1305::new(Key::from_slice(key));
    let sealed = cipher
        .encrypt(Nonce::from_slice(nonce), message)
        .expect("chacha20poly1305 encryption is infallible for in-memory buffers");
    let mut out = Vec::with_capacity(NONCE_LEN + sealed.len());
    out.extend_from_slice(nonce);
    out.extend_from_slice(&sealed);
    out
}

fn aead_open(key: &[u8; 32], ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.len() < NONCE_LEN + TAG_LEN {
        return Err(CryptoError::Truncated);
    }
    let (nonce, body) = ciphertext.split_at(NONCE_LEN);
    ChaCha20Poly1305::new(Key::from_slice(key))
        .decrypt(Nonce::from_slice(nonce), body)
        .map_err(|_| CryptoError::Decryption)
}

fn hybrid_key(shared: &[u8; 32], ephemeral: &[u8; 32], recipient: &[u8; 32]) -> [u8; 32] {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(ephemeral);
    salt[32..].copy_from_slice(recipient);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut okm = [0u8; 32];
    hk.expand(HYBRID_INFO, &mut okm).expect("32 bytes is a valid HKDF length");
    okm
}

/// Hybrid encryption: ephemeral X25519 agreement, HKDF-SHA256, then the
/// symmetric cipher. Layout: `ephemeral_public(32) || nonce || ct || tag`.
pub fn pub_encrypt<R: RngCore + CryptoRng + ?Sized>(pk: &PublicKey, message: &[u8], rng: &mut R) -> Vec<u8> {
    let mut eph_raw = [0u8; 32];
    rng.fill_bytes(&mut eph_raw);
    let eph = StaticSecret::from(eph_raw);
    let eph_pub = DhPublic::from(&eph);
    let recipient = pk.dh_public();
    let shared = eph.diffie_hellman(&recipient);
    let key = hybrid_key(shared.as_bytes(), eph_pub.as_bytes(), recipient.as_bytes());
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let mut out = Vec::with_capacity(DH_LEN + NONCE_LEN + message.len() + TAG_LEN);
    out.extend_from_slice(eph_pub.as_bytes());
    out.extend_from_slice(&aead_seal(&key, &nonce, message));
    out
}

pub fn pub_decrypt(sk: &PrivateKey, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.len() < DH_LEN + NONCE_LEN + TAG_LEN {
        return Err(CryptoError::Truncated);
    }
    let eph_raw: [u8; 32] = ciphertext[..DH_LEN].try_into().expect("split");
    let eph_pub = DhPublic::from(eph_raw);
    let secret = sk.dh_secret();
    let shared = secret.diffie_hellman(&eph_pub);
    if !shared.was_contributory() {
        return Err(CryptoError::Decryption);
    }
    let recipient = DhPublic::from(&secret);
    let key = hybrid_key(shared.as_bytes(), &eph_raw, recipient.as_bytes());
    aead_open(&key, &ciphertext[DH_LEN..])
}

/// A 160-bit DHT address.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Address(pub [u8; ADDRESS_LEN]);

impl Address {
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut raw = [0u8; ADDRESS_LEN];
        rng.fill_bytes(&mut raw);
        Self(raw)
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(Self)
    }

    pub fn as_bytes(&self) -> &[u8; ADDRESS_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        hex::decode(s).ok().and_then(|b| Self::from_bytes(&b))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

fn hash160(parts: &[&[u8]]) -> Address {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    let digest = h.finalize();
    let mut out = [0u8; ADDRESS_LEN];
    out.copy_from_slice(&digest[..ADDRESS_LEN]);
    Address(out)
}

/// `h(K)`: the cryptographically generated address of a public key.
pub fn address_of(pk: &PublicKey) -> Address {
    hash160(&[&[DOMAIN_ADDRESS], &pk.canonical()])
}

/// `h(K.i)`: index-derived address, domain-separated from [`address_of`].
pub fn derived_address(pk: &PublicKey, index: u64) -> Address {
    hash160(&[&[DOMAIN_DERIVED], &pk.canonical(), &index.to_be_bytes()])
}

/// Directory slot for a group name.
pub fn directory_address(name: &str) -> Address {
    hash160(&[&[DOMAIN_DIRECTORY], name.as_bytes()])
}

/// Address of chunk `index` of a structure keyed by `pk`: chunk 0 sits at
/// `h(K)`, the rest at `h(K.i)`.
pub fn chunk_address(pk: &PublicKey, index: u32) -> Address {
    if index == 0 {
        address_of(pk)
    } else {
        derived_address(pk, u64::from(index))
    }
}

// Hex serde for key material; used by the keystore and reports.
macro_rules! hex_serde {
    ($ty:ty, $ctor:expr) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&hex::encode(&self.0))
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
                $ctor(&bytes).map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_serde!(PublicKey, PublicKey::from_bytes);
hex_serde!(PrivateKey, PrivateKey::from_bytes);
hex_serde!(SymKey, SymKey::from_bytes);
hex_serde!(Address, |b: &[u8]| Address::from_bytes(b).ok_or("address must be 20 bytes"));

impl Serialize for KeyPair {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.private.serialize(s)
    }
}

impl<'de> Deserialize<'de> for KeyPair {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(KeyPair::from_private(PrivateKey::deserialize(d)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::collections::HashSet;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    #[test]
    fn keygen_is_seed_deterministic() {
        assert_eq!(gen_keypair(&mut rng(42)), gen_keypair(&mut rng(42)));
        assert_ne!(gen_keypair(&mut rng(42)).public, gen_keypair(&mut rng(43)).public);
    }

    #[test]
    fn thousand_keys_are_distinct() {
        let mut r = rng(7);
        let keys: HashSet<_> = (0..1000).map(|_| gen_keypair(&mut r).public).collect();
        assert_eq!(keys.len(), 1000);
    }

    #[test]
    fn addresses_are_160_bits_and_pure() {
        let k = gen_keypair(&mut rng(1)).public;
        assert_eq!(address_of(&k).as_bytes().len(), 20);
        assert_eq!(address_of(&k), address_of(&k));
        assert_eq!(derived_address(&k, 9), derived_address(&k, 9));
    }

    #[test]
    fn address_scan_has_no_collisions() {
        let mut r = rng(2);
        let mut seen = HashSet::new();
        for _ in 0..10_000 {
            let k = gen_keypair(&mut r).public;
            assert!(seen.insert(address_of(&k)));
        }
    }

    #[test]
    fn derived_addresses_separate_from_cga() {
        let k = gen_keypair(&mut rng(3)).public;
        assert_ne!(derived_address(&k, 0), address_of(&k));
        let mut seen: HashSet<Address> = HashSet::new();
        seen.insert(address_of(&k));
        for i in 0..256u64 {
            assert!(seen.insert(derived_address(&k, i)), "collision at index {i}");
        }
    }

    #[test]
    fn signature_rejects_malleation_and_wrong_key() {
        let mut r = rng(4);
        let a = gen_keypair(&mut r);
        let b = gen_keypair(&mut r);
        let m = b"join request".to_vec();
        let s = a.sign(&m);
        assert!(verify(&a.public, &m, &s));
        let mut longer = m.clone();
        longer.push(0);
        assert!(!verify(&a.public, &longer, &s));
        assert!(!verify(&b.public, &m, &s));
        assert!(!verify(&a.public, &m, &Signature([0u8; 64])));
    }

    #[test]
    fn symmetric_roundtrip_and_wrong_key() {
        let mut r = rng(5);
        let k = SymKey::generate(&mut r);
        let other = SymKey::generate(&mut r);
        let c = sym_encrypt(&k, b"", &mut r);
        assert_eq!(sym_decrypt(&k, &c).unwrap(), b"");
        let c = sym_encrypt(&k, b"wall", &mut r);
        assert_eq!(sym_decrypt(&other, &c), Err(CryptoError::Decryption));
        let mut tampered = c.clone();
        tampered[14] ^= 1;
        assert!(sym_decrypt(&k, &tampered).is_err());
    }

    #[test]
    fn ciphertext_never_contains_plaintext() {
        let mut r = rng(6);
        let k = SymKey::generate(&mut r);
        for i in 0..1000 {
            let len = 16 + (i % 200);
            let mut m = vec![0u8; len];
            r.fill_bytes(&mut m);
            let c = sym_encrypt(&k, &m, &mut r);
            assert!(!c.windows(m.len()).any(|w| w == m.as_slice()));
        }
    }

    #[test]
    fn hybrid_roundtrip_and_randomization() {
        let mut r = rng(8);
        let kp = gen_keypair(&mut r);
        let stranger = gen_keypair(&mut r);
        let mut m = vec![0u8; 4096];
        r.fill_bytes(&mut m);
        let c1 = pub_encrypt(&kp.public, &m, &mut r);
        let c2 = pub_encrypt(&kp.public, &m, &mut r);
        assert_ne!(c1, c2);
        assert_eq!(pub_decrypt(&kp.private, &c1).unwrap(), m);
        assert!(pub_decrypt(&stranger.private, &c1).is_err());
    }

    #[test]
    fn canonical_encoding_roundtrips() {
        let k = gen_keypair(&mut rng(9)).public;
        let enc = k.canonical();
        assert_eq!(&enc[..4], &[0, 0, 0, 64]);
        let (back, used) = PublicKey::from_canonical(&enc).unwrap();
        assert_eq!(back, k);
        assert_eq!(used, 68);
        assert!(PublicKey::from_canonical(&enc[..20]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn sign_verify_total(seed in any::<u64>(), msg in proptest::collection::vec(any::<u8>(), 0..512)) {
                let kp = gen_keypair(&mut rng(seed));
                prop_assert!(verify(&kp.public, &msg, &kp.sign(&msg)));
            }

            #[test]
            fn encryption_roundtrips(seed in any::<u64>(), msg in proptest::collection::vec(any::<u8>(), 0..1024)) {
                let mut r = rng(seed);
                let kp = gen_keypair(&mut r);
                let sk = SymKey::generate(&mut r);
                let c = sym_encrypt(&sk, &msg, &mut r);
                prop_assert_eq!(sym_decrypt(&sk, &c).unwrap(), msg.clone());
                let c = pub_encrypt(&kp.public, &msg, &mut r);
                prop_assert_eq!(pub_decrypt(&kp.private, &c).unwrap(), msg);
            }
        }
    }
}
