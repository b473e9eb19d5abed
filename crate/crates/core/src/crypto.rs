//! Content digests (real SHA-256 over canonical bytes) and simulator-issued
//! signature tokens.
//!
//! Tokens stand in for signatures: the registry records (signer, nonce) ->
//! digest at signing time and `verify` checks that exact binding, so a token
//! is unforgeable and non-transferable by construction. Byzantine adapters
//! can re-sign whatever they like as themselves (equivocation) but cannot
//! mint tokens for other identities, because signing is keyed by the calling
//! node's id.

use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest as _, Sha256};

use crate::codec::{Decoder, Encode};
use crate::types::NodeId;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of_bytes(bytes: &[u8]) -> Digest {
        let mut h = Sha256::new();
        h.update(bytes);
        Digest(h.finalize().into())
    }

    pub fn of<T: Encode + ?Sized>(value: &T) -> Digest {
        Digest::of_bytes(&value.encoded())
    }

    pub fn zero() -> Digest {
        Digest([0; 32])
    }

    pub fn hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", &self.hex()[..8])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", &self.hex()[..8])
    }
}

impl Encode for Digest {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0);
    }
}

impl Digest {
    pub fn decode(d: &mut Decoder) -> crate::Result<Digest> {
        Ok(Digest(d.bytes32()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SigToken {
    pub signer: NodeId,
    pub nonce: u64,
}

impl Encode for SigToken {
    fn encode(&self, out: &mut Vec<u8>) {
        self.signer.encode(out);
        self.nonce.encode(out);
    }
}

#[derive(Debug, Default)]
pub struct CryptoRegistry {
    next_nonce: u64,
    issued: BTreeMap<(NodeId, u64), Digest>,
}

impl CryptoRegistry {
    pub fn new() -> CryptoRegistry {
        CryptoRegistry::default()
    }

    pub fn sign(&mut self, signer: NodeId, digest: &Digest) -> SigToken {
        let nonce = self.next_nonce;
        self.next_nonce += 1;
        self.issued.insert((signer, nonce), *digest);
        SigToken { signer, nonce }
    }

    pub fn verify(&self, signer: NodeId, digest: &Digest, token: &SigToken) -> bool {
        token.signer == signer && self.issued.get(&(signer, token.nonce)) == Some(digest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable_over_reserialization() {
        let v = vec!["a".to_string(), "bc".to_string()];
        let d1 = Digest::of(&v);
        let d2 = Digest::of_bytes(&v.encoded());
        assert_eq!(d1, d2);
        // Known-answer: SHA-256 of the canonical bytes of an empty Vec<u8>
        // (just the u32 zero length prefix).
        let empty: Vec<u8> = Vec::new();
        assert_eq!(
            Digest::of(&empty).hex(),
            Digest::of_bytes(&[0, 0, 0, 0]).hex()
        );
    }

    #[test]
    fn tokens_bind_signer_and_payload() {
        let mut reg = CryptoRegistry::new();
        let a = NodeId(1);
        let b = NodeId(2);
        let d1 = Digest::of_bytes(b"payload-1");
        let d2 = Digest::of_bytes(b"payload-2");
        let t = reg.sign(a, &d1);
        assert!(reg.verify(a, &d1, &t));
        // Tampered payload, transplanted signer, replayed nonce: all fail.
        assert!(!reg.verify(a, &d2, &t));
        assert!(!reg.verify(b, &d1, &t));
        let forged = SigToken { signer: b, nonce: t.nonce };
        assert!(!reg.verify(b, &d1, &forged));
    }

    #[test]
    fn same_signer_may_sign_conflicting_payloads() {
        // Equivocation is representable; detection is the protocol's job.
        let mut reg = CryptoRegistry::new();
        let a = NodeId(7);
        let d1 = Digest::of_bytes(b"v1");
        let d2 = Digest::of_bytes(b"v2");
        let t1 = reg.sign(a, &d1);
        let t2 = reg.sign(a, &d2);
        assert!(reg.verify(a, &d1, &t1));
        assert!(reg.verify(a, &d2, &t2));
        assert_ne!(t1.nonce, t2.nonce);
    }
}
