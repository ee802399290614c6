//! Plaintext bodies carried inside encrypted structures and inbox messages.

use rand::{CryptoRng, RngCore};

use super::codec::{len_u32, Reader, Writer};
use super::inbox::InboxMessage;
use super::{RecordType, WireError};
use crate::crypto::{self, pub_decrypt, pub_encrypt, KeyPair, PrivateKey, PublicKey, Signature, SymKey};

/// `[4B len][content][4B sig len][sig]`, signature over `content`.
pub fn sign_blob(signer: &KeyPair, content: &[u8]) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(content).signature(&signer.sign(content));
    w.finish()
}

pub fn open_blob(bytes: &[u8]) -> Result<(&[u8], Signature), WireError> {
    let mut r = Reader::new(bytes);
    let content = r.bytes()?;
    let sig = r.signature()?;
    r.finish()?;
    Ok((content, sig))
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MemberEntry {
    pub principal: PublicKey,
    /// `K_j`; absent for entries added without an inbox (e.g. a group root).
    pub inbox: Option<PublicKey>,
}

/// Plaintext member list `[X]`; the counter lives in the enclosing record.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemberList {
    pub entries: Vec<MemberEntry>,
}

impl MemberList {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(len_u32(self.entries.len()));
        for e in &self.entries {
            w.key(&e.principal);
            match &e.inbox {
                Some(k) => w.u8(1).key(k),
                None => w.u8(0),
            };
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let n = r.u32()?;
        let mut entries = Vec::new();
        for _ in 0..n {
            let principal = r.key()?;
            let inbox = match r.u8()? {
                0 => None,
                1 => Some(r.key()?),
                _ => return Err(WireError::Malformed("member inbox flag")),
            };
            entries.push(MemberEntry { principal, inbox });
        }
        r.finish()?;
        Ok(Self { entries })
    }

    pub fn contains(&self, principal: &PublicKey) -> bool {
        self.entries.iter().any(|e| &e.principal == principal)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Key material a helo can hand to a member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GrantedKey {
    ListSym(SymKey),
    WallSym(SymKey),
    WallSigning(PrivateKey),
}

impl GrantedKey {
    fn kind(&self) -> u8 {
        match self {
            Self::ListSym(_) => 1,
            Self::WallSym(_) => 2,
            Self::WallSigning(_) => 3,
        }
    }

    fn material(&self) -> &[u8] {
        match self {
            Self::ListSym(k) | Self::WallSym(k) => k.as_bytes(),
            Self::WallSigning(k) => k.as_bytes(),
        }
    }
}

/// `helo.[keys]` plus the current component keys and a key epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeloBody {
    pub epoch: u64,
    pub list_key: PublicKey,
    pub wall_key: PublicKey,
    pub keys: Vec<GrantedKey>,
}

impl HeloBody {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(RecordType::Helo.tag())
            .u64(self.epoch)
            .key(&self.list_key)
            .key(&self.wall_key)
            .u32(len_u32(self.keys.len()));
        for k in &self.keys {
            w.u8(k.kind()).bytes(k.material());
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        if r.u8()? != RecordType::Helo.tag() {
            return Err(WireError::Malformed("helo tag"));
        }
        let epoch = r.u64()?;
        let list_key = r.key()?;
        let wall_key = r.key()?;
        let n = r.u32()?;
        let mut keys = Vec::new();
        for _ in 0..n {
            let kind = r.u8()?;
            let material = r.bytes()?;
            keys.push(match kind {
                1 => GrantedKey::ListSym(SymKey::from_bytes(material)?),
                2 => GrantedKey::WallSym(SymKey::from_bytes(material)?),
                3 => GrantedKey::WallSigning(PrivateKey::from_bytes(material)?),
                _ => return Err(WireError::Malformed("granted key kind")),
            });
        }
        r.finish()?;
        Ok(Self { epoch, list_key, wall_key, keys })
    }
}

/// `{{helo.[keys]}_{K_i^-1}}_{K_j}`.
pub fn seal_helo<R: RngCore + CryptoRng + ?Sized>(
    body: &HeloBody,
    group_inbox: &KeyPair,
    member_inbox: &PublicKey,
    rng: &mut R,
) -> InboxMessage {
    let signed = sign_blob(group_inbox, &body.encode());
    InboxMessage::new(RecordType::Helo, pub_encrypt(member_inbox, &signed, rng))
}

/// Opens a helo addressed to `member_inbox`; `BadSignature` means it
/// decrypted but was not signed by the expected group inbox key.
pub fn open_helo(msg: &InboxMessage, member_inbox: &KeyPair, group_inbox: &PublicKey) -> Result<HeloBody, WireError> {
    if msg.rtype != RecordType::Helo {
        return Err(WireError::Malformed("not a helo"));
    }
    let plain = pub_decrypt(&member_inbox.private, &msg.body).map_err(|_| WireError::Undecryptable)?;
    let (content, sig) = open_blob(&plain)?;
    if !crypto::verify(group_inbox, content, &sig) {
        return Err(WireError::BadSignature);
    }
    HeloBody::decode(content)
}

/// Verified contents of a join request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinRequest {
    pub principal: PublicKey,
    pub join_inbox: PublicKey,
    pub ticket: InboxMessage,
}

/// `{{{join.K_p.K_j.ticket}_{K_p^-1}}_{K_j^-1}}_{K_i}`.
pub fn seal_join<R: RngCore + CryptoRng + ?Sized>(
    principal: &KeyPair,
    join_inbox: &KeyPair,
    ticket: &InboxMessage,
    group_inbox: &PublicKey,
    rng: &mut R,
) -> InboxMessage {
    let mut inner = Writer::new();
    inner
        .u8(RecordType::Join.tag())
        .key(&principal.public)
        .key(&join_inbox.public)
        .bytes(&ticket.to_bytes());
    let by_principal = sign_blob(principal, inner.as_slice());
    let by_inbox = sign_blob(join_inbox, &by_principal);
    InboxMessage::new(RecordType::Join, pub_encrypt(group_inbox, &by_inbox, rng))
}

pub fn open_join(msg: &InboxMessage, group_inbox: &KeyPair) -> Result<JoinRequest, WireError> {
    if msg.rtype != RecordType::Join {
        return Err(WireError::Malformed("not a join request"));
    }
    let plain = pub_decrypt(&group_inbox.private, &msg.body).map_err(|_| WireError::Undecryptable)?;
    let (by_principal, inbox_sig) = open_blob(&plain)?;
    let (inner, principal_sig) = open_blob(by_principal)?;
    let mut r = Reader::new(inner);
    if r.u8()? != RecordType::Join.tag() {
        return Err(WireError::Malformed("join tag"));
    }
    let principal = r.key()?;
    let join_inbox = r.key()?;
    let ticket = InboxMessage::from_bytes(r.bytes()?)?;
    r.finish()?;
    if !crypto::verify(&principal, inner, &principal_sig) || !crypto::verify(&join_inbox, by_principal, &inbox_sig) {
        return Err(WireError::BadSignature);
    }
    Ok(JoinRequest { principal, join_inbox, ticket })
}

/// `{{mess.m}_{K_p^-1}}_{K_i}`; the sender key travels inside the ciphertext.
pub fn seal_private_message<R: RngCore + CryptoRng + ?Sized>(
    sender: &KeyPair,
    recipient: &PublicKey,
    body: &[u8],
    rng: &mut R,
) -> InboxMessage {
    let mut inner = Writer::new();
    inner.u8(RecordType::Mess.tag()).key(&sender.public).bytes(body);
    let signed = sign_blob(sender, inner.as_slice());
    InboxMessage::new(RecordType::Mess, pub_encrypt(recipient, &signed, rng))
}

/// Returns the verified sender key and body.
pub fn open_private_message(msg: &InboxMessage, recipient: &KeyPair) -> Result<(PublicKey, Vec<u8>), WireError> {
    let plain = pub_decrypt(&recipient.private, &msg.body).map_err(|_| WireError::Undecryptable)?;
    let (inner, sig) = open_blob(&plain)?;
    let mut r = Reader::new(inner);
    if r.u8()? != RecordType::Mess.tag() {
        return Err(WireError::Malformed("mess tag"));
    }
    let sender = r.key()?;
    let body = r.bytes()?.to_vec();
    r.finish()?;
    if !crypto::verify(&sender, inner, &sig) {
        return Err(WireError::BadSignature);
    }
    Ok((sender, body))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::gen_keypair;
    use crate::wire::make_once_ticket;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn join_request_roundtrip_and_key_checks() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let kp = gen_keypair(&mut rng);
        let kj = gen_keypair(&mut rng);
        let ki = gen_keypair(&mut rng);
        let kl = gen_keypair(&mut rng);
        let ticket = make_once_ticket(3, &kl, &mut rng);
        let req = seal_join(&kp, &kj, &ticket, &ki.public, &mut rng);
        let opened = open_join(&req, &ki).unwrap();
        assert_eq!(opened.principal, kp.public);
        assert_eq!(opened.join_inbox, kj.public);
        assert_eq!(opened.ticket, ticket);
        assert_eq!(open_join(&req, &kl), Err(WireError::Undecryptable));
        // Clear bytes never expose K_p.
        let bytes = req.to_bytes();
        assert!(!bytes.windows(64).any(|w| w == kp.public.as_bytes()));
    }

    #[test]
    fn helo_signature_is_checked() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let ki = gen_keypair(&mut rng);
        let kj = gen_keypair(&mut rng);
        let kl = gen_keypair(&mut rng);
        let kw = gen_keypair(&mut rng);
        let body = HeloBody {
            epoch: 0,
            list_key: kl.public.clone(),
            wall_key: kw.public.clone(),
            keys: vec![GrantedKey::WallSym(SymKey::generate(&mut rng)), GrantedKey::WallSigning(kw.private.clone())],
        };
        let helo = seal_helo(&body, &ki, &kj.public, &mut rng);
        assert_eq!(open_helo(&helo, &kj, &ki.public).unwrap(), body);
        let spoof = seal_helo(&body, &kl, &kj.public, &mut rng);
        assert_eq!(open_helo(&spoof, &kj, &ki.public), Err(WireError::BadSignature));
    }

    #[test]
    fn member_list_roundtrip() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let list = MemberList {
            entries: vec![
                MemberEntry { principal: gen_keypair(&mut rng).public, inbox: Some(gen_keypair(&mut rng).public) },
                MemberEntry { principal: gen_keypair(&mut rng).public, inbox: None },
            ],
        };
        assert_eq!(MemberList::decode(&list.encode()).unwrap(), list);
    }

    #[test]
    fn private_message_roundtrip() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let sender = gen_keypair(&mut rng);
        let inbox = gen_keypair(&mut rng);
        let other = gen_keypair(&mut rng);
        let msg = seal_private_message(&sender, &inbox.public, b"hello", &mut rng);
        assert_eq!(open_private_message(&msg, &inbox).unwrap(), (sender.public.clone(), b"hello".to_vec()));
        assert_eq!(open_private_message(&msg, &other), Err(WireError::Undecryptable));
    }
}
