//! Full-member block store feeding the DAG: committed local blocks are
//! replicated to every other full member, acknowledged, and promoted to
//! *available* once a main-committee quorum holds them. Availability
//! certificates let vertices carry block digests instead of payloads.
//!
//! Own-zone blocks enter vertices strictly in number order through a
//! cursor: a block whose availability certificate completes out of order
//! waits until the gap before it closes.

use std::collections::BTreeMap;

use crate::codec::Encode;
use crate::crypto::{CryptoRegistry, Digest, SigToken};
use crate::localchain::{header_digest, LocalBlock};
use crate::types::{Certificate, CertKind, NodeId, Shared, ZoneId};

#[derive(Debug, Clone)]
pub struct StoredBlock {
    pub block: Shared<LocalBlock>,
    pub cert_local: Certificate,
    pub avail_digest: Digest,
    pub cert_avail: Option<Certificate>,
}

impl Encode for StoredBlock {
    fn encode(&self, out: &mut Vec<u8>) {
        self.block.encode(out);
        self.cert_local.encode(out);
        self.avail_digest.encode(out);
        self.cert_avail.encode(out);
    }
}

/// Portable copy of a mempool for recovery snapshots.
#[derive(Debug, Clone, Default)]
pub struct MempoolSnapshot {
    pub blocks: Vec<((ZoneId, u64), StoredBlock)>,
    pub next_to_propose: u64,
}

impl Encode for MempoolSnapshot {
    fn encode(&self, out: &mut Vec<u8>) {
        self.blocks.encode(out);
        self.next_to_propose.encode(out);
    }
}

pub struct Mempool {
    pub zone: ZoneId,
    pub me: NodeId,
    blocks: BTreeMap<(ZoneId, u64), StoredBlock>,
    own_acks: BTreeMap<u64, BTreeMap<NodeId, SigToken>>,
    next_to_propose: u64,
}

impl Mempool {
    pub fn new(zone: ZoneId, me: NodeId) -> Mempool {
        Mempool {
            zone,
            me,
            blocks: BTreeMap::new(),
            own_acks: BTreeMap::new(),
            next_to_propose: 1,
        }
    }

    /// Stores an own-zone committed block and self-acknowledges it. Returns
    /// this member's ACK token for the availability round.
    pub fn add_own(
        &mut self,
        block: Shared<LocalBlock>,
        cert_local: Certificate,
        crypto: &mut CryptoRegistry,
    ) -> SigToken {
        debug_assert_eq!(block.zone, self.zone);
        let number = block.number;
        let avail_digest = header_digest(block.zone, number, &block.digest());
        self.blocks
            .entry((self.zone, number))
            .or_insert(StoredBlock { block, cert_local, avail_digest, cert_avail: None });
        let signed = Certificate::signing_digest(CertKind::Avail, &avail_digest);
        let token = crypto.sign(self.me, &signed);
        self.own_acks.entry(number).or_default().insert(self.me, token.clone());
        token
    }

    /// Stores a replicated foreign block after checking its local commit
    /// certificate against the owning zone's local members. Returns the
    /// availability digest to acknowledge, or None if the certificate is
    /// invalid.
    pub fn store_replicated(
        &mut self,
        block: Shared<LocalBlock>,
        cert_local: Certificate,
        crypto: &CryptoRegistry,
        zone_locals: &[NodeId],
        q_local: usize,
    ) -> Option<Digest> {
        let digest = block.digest();
        if !cert_local.verify(crypto, CertKind::LocalCommit, &digest, zone_locals, q_local) {
            return None;
        }
        let avail_digest = header_digest(block.zone, block.number, &digest);
        self.blocks
            .entry((block.zone, block.number))
            .or_insert(StoredBlock { block, cert_local, avail_digest, cert_avail: None });
        Some(avail_digest)
    }

    /// Collects an availability ACK for an own block. Returns the completed
    /// availability certificate exactly once, at quorum.
    pub fn on_ack(
        &mut self,
        number: u64,
        from: NodeId,
        token: SigToken,
        crypto: &CryptoRegistry,
        fulls: &[NodeId],
        q_full: usize,
    ) -> Option<Certificate> {
        let stored = self.blocks.get_mut(&(self.zone, number))?;
        if stored.cert_avail.is_some() || !fulls.contains(&from) {
            return None;
        }
        let signed = Certificate::signing_digest(CertKind::Avail, &stored.avail_digest);
        if !crypto.verify(from, &signed, &token) {
            return None;
        }
        let acks = self.own_acks.entry(number).or_default();
        acks.insert(from, token);
        if acks.len() < q_full {
            return None;
        }
        let cert = Certificate::new(
            CertKind::Avail,
            stored.avail_digest,
            acks.iter().map(|(&n, t)| (n, t.clone())).collect(),
        );
        stored.cert_avail = Some(cert.clone());
        Some(cert)
    }

    /// Attaches an availability certificate learned from the block's owner
    /// (or from a vertex referencing it).
    pub fn attach_avail(
        &mut self,
        zone: ZoneId,
        number: u64,
        cert: Certificate,
        crypto: &CryptoRegistry,
        fulls: &[NodeId],
        q_full: usize,
    ) -> bool {
        let Some(stored) = self.blocks.get_mut(&(zone, number)) else { return false };
        if stored.cert_avail.is_some() {
            return true;
        }
        if !cert.verify(crypto, CertKind::Avail, &stored.avail_digest, fulls, q_full) {
            return false;
        }
        stored.cert_avail = Some(cert);
        true
    }

    pub fn get(&self, zone: ZoneId, number: u64) -> Option<&StoredBlock> {
        self.blocks.get(&(zone, number))
    }

    /// True when the block is stored and its availability digest matches.
    pub fn holds(&self, zone: ZoneId, number: u64, avail_digest: &Digest) -> bool {
        self.blocks
            .get(&(zone, number))
            .is_some_and(|s| s.avail_digest == *avail_digest)
    }

    /// Pops up to `max` own-zone blocks for the next vertex: consecutive
    /// numbers from the cursor, each availability-certified. Advances the
    /// cursor past what it returns.
    pub fn take_candidates(&mut self, max: usize) -> Vec<(u64, Digest)> {
        let mut out = Vec::new();
        while out.len() < max {
            match self.blocks.get(&(self.zone, self.next_to_propose)) {
                Some(s) if s.cert_avail.is_some() => {
                    out.push((self.next_to_propose, s.avail_digest));
                    self.next_to_propose += 1;
                }
                _ => break,
            }
        }
        out
    }

    pub fn has_candidates(&self) -> bool {
        self.blocks
            .get(&(self.zone, self.next_to_propose))
            .is_some_and(|s| s.cert_avail.is_some())
    }

    pub fn next_to_propose(&self) -> u64 {
        self.next_to_propose
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&(ZoneId, u64), &StoredBlock)> {
        self.blocks.iter()
    }

    pub fn export(&self) -> MempoolSnapshot {
        MempoolSnapshot {
            blocks: self.blocks.iter().map(|(k, v)| (*k, v.clone())).collect(),
            next_to_propose: self.next_to_propose,
        }
    }

    /// Installs a downloaded snapshot; `cursor` overrides the propose cursor
    /// (recovery sets it past the highest own number in certified vertices).
    pub fn restore(&mut self, snapshot: MempoolSnapshot, cursor: u64) {
        self.blocks = snapshot.blocks.into_iter().collect();
        self.own_acks.clear();
        self.next_to_propose = cursor;
    }

    /// Own blocks at or after the cursor (re-replicated after recovery).
    pub fn own_blocks_from(&self, number: u64) -> Vec<&StoredBlock> {
        self.blocks
            .range((self.zone, number)..=(self.zone, u64::MAX))
            .map(|(_, s)| s)
            .collect()
    }
}
