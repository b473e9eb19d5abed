//! Round-structured DAG over availability-certified block digests. Each
//! full member emits one vertex per round carrying its own zone's next
//! consecutive block digests; parents are inclusion certificates of
//! round r−1 vertices. A vertex is *certified* once a main-committee quorum
//! signs it, and the committee advances to round r+1 only after holding a
//! quorum of round-r certificates that includes its own vertex's.
//!
//! Vote discipline (enforced by every honest member):
//!   1. at most one vote per (zone, round) — slots are zone-keyed so an
//!      equivocating vertex is flagged and never co-signed;
//!   2. the creator must be the zone's currently registered full member;
//!   3. parents must be valid certificates of known round r−1 vertices, at
//!      least a quorum of them (round 1 vertices have none);
//!   4. block digests must be the zone's consecutive next numbers, and any
//!      (zone, number) this member endorsed before must map to the same
//!      digest — so certified vertices can never bind one block number to
//!      two payloads;
//!   5. every referenced block must be held locally (missing ones are
//!      fetched and the vote retried).
//!
//! Identical (zone, number) digests may legitimately reappear when a
//! recovered full member re-proposes blocks whose earlier vertex it cannot
//! prove certified; ordering deduplicates by number, which is safe exactly
//! because rule 4 pins the digest.

use std::collections::BTreeMap;

use crate::codec::Encode;
use crate::crypto::{CryptoRegistry, Digest, SigToken};
use crate::types::{Certificate, CertKind, NodeId, Shared, ZoneId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vertex {
    pub creator: NodeId,
    pub zone: ZoneId,
    pub round: u64,
    /// Own-zone (block number, availability digest), consecutive numbers.
    pub digests: Vec<(u64, Digest)>,
    /// Inclusion certificates of round−1 vertices, sorted by subject.
    pub parents: Vec<Certificate>,
}

impl Vertex {
    /// Identity of the vertex: covers parent subjects but not their
    /// signature sets, so the same logical vertex hashes identically
    /// everywhere.
    pub fn structural_digest(&self) -> Digest {
        let mut buf = Vec::new();
        "dag-vertex".encode(&mut buf);
        self.creator.encode(&mut buf);
        self.zone.encode(&mut buf);
        self.round.encode(&mut buf);
        self.digests.to_vec().encode(&mut buf);
        let subjects: Vec<Digest> = self.parents.iter().map(|c| c.subject).collect();
        subjects.encode(&mut buf);
        Digest::of_bytes(&buf)
    }

    pub fn parent_subjects(&self) -> impl Iterator<Item = Digest> + '_ {
        self.parents.iter().map(|c| c.subject)
    }
}

impl Encode for Vertex {
    fn encode(&self, out: &mut Vec<u8>) {
        self.creator.encode(out);
        self.zone.encode(out);
        self.round.encode(out);
        self.digests.to_vec().encode(out);
        self.parents.encode(out);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivocationEvidence {
    pub zone: ZoneId,
    pub round: u64,
    pub creator: NodeId,
    pub first: Digest,
    pub second: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VertexReject {
    BadRound,
    WrongCreator,
    Equivocation,
    TooManyDigests,
    NonConsecutiveDigests,
    NumberContinuity { expected: u64, got: u64 },
    DigestConflict { number: u64 },
    TooFewParents,
    ParentRoundMismatch,
    BadParentCert,
    DuplicateParent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VoteDecision {
    /// Sign an inclusion vote over this structural digest.
    Vote(Digest),
    /// Referenced blocks not held yet; fetch, then retry.
    NeedBlocks(Vec<(ZoneId, u64)>),
    /// Parent vertices unknown; fetch by digest, then retry.
    NeedParents(Vec<Digest>),
    AlreadyVoted,
    Reject(VertexReject),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertOutcome {
    Added,
    AlreadyHad,
    /// Cert parked until its vertex arrives (fetch it).
    UnknownVertex,
    Invalid,
}

pub struct DagView {
    pub me: NodeId,
    vertices: BTreeMap<Digest, Shared<Vertex>>,
    certs: BTreeMap<Digest, Certificate>,
    seen_by_slot: BTreeMap<(ZoneId, u64), Vec<Digest>>,
    certified_by_round: BTreeMap<u64, BTreeMap<ZoneId, Digest>>,
    latest_certified_round: BTreeMap<ZoneId, u64>,
    /// Vote lock: which digest this member endorsed per (zone, round).
    voted_slot: BTreeMap<(ZoneId, u64), Digest>,
    /// Digest binding per (zone, block number) across this member's votes.
    voted_numbers: BTreeMap<(ZoneId, u64), Digest>,
    /// Next expected first-number per zone, from certified vertices.
    next_number: BTreeMap<ZoneId, u64>,
    /// Vote collection for vertices this member created.
    own_votes: BTreeMap<Digest, BTreeMap<NodeId, SigToken>>,
    pending_certs: BTreeMap<Digest, Certificate>,
    equivocations: Vec<EquivocationEvidence>,
}

impl DagView {
    pub fn new(me: NodeId) -> DagView {
        DagView {
            me,
            vertices: BTreeMap::new(),
            certs: BTreeMap::new(),
            seen_by_slot: BTreeMap::new(),
            certified_by_round: BTreeMap::new(),
            latest_certified_round: BTreeMap::new(),
            voted_slot: BTreeMap::new(),
            voted_numbers: BTreeMap::new(),
            next_number: BTreeMap::new(),
            own_votes: BTreeMap::new(),
            pending_certs: BTreeMap::new(),
            equivocations: Vec::new(),
        }
    }

    /// Assembles, stores and self-endorses this member's vertex for `round`.
    pub fn create_vertex(
        &mut self,
        zone: ZoneId,
        round: u64,
        digests: Vec<(u64, Digest)>,
        crypto: &mut CryptoRegistry,
    ) -> Shared<Vertex> {
        let mut parents: Vec<Certificate> = if round > 1 {
            self.certified_by_round
                .get(&(round - 1))
                .map(|m| m.values().map(|d| self.certs[d].clone()).collect())
                .unwrap_or_default()
        } else {
            Vec::new()
        };
        parents.sort_by(|a, b| a.subject.0.cmp(&b.subject.0));
        let vertex = Shared::new(Vertex { creator: self.me, zone, round, digests, parents });
        let digest = vertex.structural_digest();
        self.store_vertex(vertex.clone());
        self.voted_slot.insert((zone, round), digest);
        for &(n, d) in &vertex.digests {
            self.voted_numbers.insert((zone, n), d);
        }
        let signed = Certificate::signing_digest(CertKind::Inclusion, &digest);
        let token = crypto.sign(self.me, &signed);
        self.own_votes.entry(digest).or_default().insert(self.me, token);
        vertex
    }

    /// Stores a vertex (idempotent), recording equivocation evidence when a
    /// different vertex already occupies its (zone, round) slot.
    pub fn store_vertex(&mut self, vertex: Shared<Vertex>) -> Digest {
        let digest = vertex.structural_digest();
        let slot = (vertex.zone, vertex.round);
        let seen = self.seen_by_slot.entry(slot).or_default();
        if !seen.contains(&digest) {
            if let Some(&first) = seen.first() {
                self.equivocations.push(EquivocationEvidence {
                    zone: vertex.zone,
                    round: vertex.round,
                    creator: vertex.creator,
                    first,
                    second: digest,
                });
            }
            seen.push(digest);
        }
        self.vertices.entry(digest).or_insert(vertex);
        if let Some(cert) = self.pending_certs.remove(&digest) {
            self.certify(digest, cert);
        }
        digest
    }

    pub fn vertex(&self, digest: &Digest) -> Option<&Shared<Vertex>> {
        self.vertices.get(digest)
    }

    pub fn cert(&self, digest: &Digest) -> Option<&Certificate> {
        self.certs.get(digest)
    }

    pub fn is_certified(&self, digest: &Digest) -> bool {
        self.certs.contains_key(digest)
    }

    /// Full vote check; does not record the vote (call `record_vote` with
    /// the digest once the vote is actually sent).
    pub fn consider(
        &mut self,
        vertex: &Shared<Vertex>,
        expected_creator: NodeId,
        crypto: &CryptoRegistry,
        fulls: &[NodeId],
        q_full: usize,
        max_digests: usize,
        holds: &dyn Fn(ZoneId, u64, &Digest) -> bool,
    ) -> VoteDecision {
        let digest = self.store_vertex(vertex.clone());
        let zone = vertex.zone;
        if vertex.round == 0 {
            return VoteDecision::Reject(VertexReject::BadRound);
        }
        if let Some(&latest) = self.latest_certified_round.get(&zone) {
            if vertex.round <= latest {
                return VoteDecision::Reject(VertexReject::BadRound);
            }
        }
        if vertex.creator != expected_creator {
            return VoteDecision::Reject(VertexReject::WrongCreator);
        }
        match self.voted_slot.get(&(zone, vertex.round)) {
            Some(&prior) if prior == digest => return VoteDecision::AlreadyVoted,
            Some(_) => return VoteDecision::Reject(VertexReject::Equivocation),
            None => {}
        }
        if vertex.digests.len() > max_digests {
            return VoteDecision::Reject(VertexReject::TooManyDigests);
        }
        if vertex.digests.windows(2).any(|w| w[1].0 != w[0].0 + 1) {
            return VoteDecision::Reject(VertexReject::NonConsecutiveDigests);
        }
        if let Some(&(first, _)) = vertex.digests.first() {
            let expected = self.next_number.get(&zone).copied().unwrap_or(1);
            if first > expected {
                return VoteDecision::Reject(VertexReject::NumberContinuity {
                    expected,
                    got: first,
                });
            }
            // Numbers at or below the certified frontier must re-bind the
            // digests this member already endorsed.
            for &(n, d) in &vertex.digests {
                if let Some(&bound) = self.voted_numbers.get(&(zone, n)) {
                    if bound != d {
                        return VoteDecision::Reject(VertexReject::DigestConflict { number: n });
                    }
                }
            }
        }
        // Parents.
        if vertex.round == 1 {
            if !vertex.parents.is_empty() {
                return VoteDecision::Reject(VertexReject::ParentRoundMismatch);
            }
        } else {
            let mut missing = Vec::new();
            let mut subjects = Vec::new();
            for cert in &vertex.parents {
                if subjects.contains(&cert.subject) {
                    return VoteDecision::Reject(VertexReject::DuplicateParent);
                }
                subjects.push(cert.subject);
                match self.vertices.get(&cert.subject) {
                    None => missing.push(cert.subject),
                    Some(parent) => {
                        if parent.round != vertex.round - 1 {
                            return VoteDecision::Reject(VertexReject::ParentRoundMismatch);
                        }
                    }
                }
            }
            if !missing.is_empty() {
                return VoteDecision::NeedParents(missing);
            }
            if vertex.parents.len() < q_full {
                return VoteDecision::Reject(VertexReject::TooFewParents);
            }
            for cert in &vertex.parents {
                if !cert.verify(crypto, CertKind::Inclusion, &cert.subject, fulls, q_full) {
                    return VoteDecision::Reject(VertexReject::BadParentCert);
                }
                // A valid parent cert is worth keeping even if we had not
                // seen it on the cert channel.
                self.certify(cert.subject, cert.clone());
            }
        }
        // Blocks.
        let unheld: Vec<(ZoneId, u64)> = vertex
            .digests
            .iter()
            .filter(|(n, d)| !holds(zone, *n, d))
            .map(|&(n, _)| (zone, n))
            .collect();
        if !unheld.is_empty() {
            return VoteDecision::NeedBlocks(unheld);
        }
        VoteDecision::Vote(digest)
    }

    /// Locks in a vote this member is sending for the vertex.
    pub fn record_vote(&mut self, vertex: &Vertex, digest: Digest) {
        self.voted_slot.insert((vertex.zone, vertex.round), digest);
        for &(n, d) in &vertex.digests {
            self.voted_numbers.insert((vertex.zone, n), d);
        }
    }

    /// Collects a vote on an own vertex; yields the inclusion certificate
    /// exactly once, at quorum.
    pub fn add_vote(
        &mut self,
        subject: Digest,
        from: NodeId,
        token: SigToken,
        crypto: &CryptoRegistry,
        fulls: &[NodeId],
        q_full: usize,
    ) -> Option<Certificate> {
        if self.certs.contains_key(&subject) || !fulls.contains(&from) {
            return None;
        }
        let signed = Certificate::signing_digest(CertKind::Inclusion, &subject);
        if !crypto.verify(from, &signed, &token) {
            return None;
        }
        let votes = self.own_votes.entry(subject).or_default();
        votes.insert(from, token);
        if votes.len() < q_full {
            return None;
        }
        let cert = Certificate::new(
            CertKind::Inclusion,
            subject,
            votes.iter().map(|(&n, t)| (n, t.clone())).collect(),
        );
        self.certify(subject, cert.clone());
        Some(cert)
    }

    /// Incorporates a certificate received off the wire.
    pub fn add_cert(
        &mut self,
        cert: Certificate,
        crypto: &CryptoRegistry,
        fulls: &[NodeId],
        q_full: usize,
    ) -> CertOutcome {
        let subject = cert.subject;
        if self.certs.contains_key(&subject) {
            return CertOutcome::AlreadyHad;
        }
        if !cert.verify(crypto, CertKind::Inclusion, &subject, fulls, q_full) {
            return CertOutcome::Invalid;
        }
        if !self.vertices.contains_key(&subject) {
            self.pending_certs.insert(subject, cert);
            return CertOutcome::UnknownVertex;
        }
        self.certify(subject, cert);
        CertOutcome::Added
    }

    fn certify(&mut self, subject: Digest, cert: Certificate) {
        if self.certs.contains_key(&subject) {
            return;
        }
        let Some(vertex) = self.vertices.get(&subject).cloned() else {
            self.pending_certs.insert(subject, cert);
            return;
        };
        self.certs.insert(subject, cert);
        self.certified_by_round
            .entry(vertex.round)
            .or_default()
            .entry(vertex.zone)
            .or_insert(subject);
        let latest = self.latest_certified_round.entry(vertex.zone).or_insert(0);
        *latest = (*latest).max(vertex.round);
        if let Some(&(_, _)) = vertex.digests.first() {
            let last = vertex.digests.last().unwrap().0;
            let next = self.next_number.entry(vertex.zone).or_insert(1);
            *next = (*next).max(last + 1);
        }
    }

    pub fn certified_count(&self, round: u64) -> usize {
        self.certified_by_round.get(&round).map_or(0, |m| m.len())
    }

    pub fn certified_at(&self, round: u64) -> impl Iterator<Item = (&ZoneId, &Digest)> {
        self.certified_by_round.get(&round).into_iter().flat_map(|m| m.iter())
    }

    pub fn certified_digest(&self, round: u64, zone: ZoneId) -> Option<Digest> {
        self.certified_by_round.get(&round)?.get(&zone).copied()
    }

    /// Round-advance gate: a quorum of round-r certs including this zone's
    /// own vertex.
    pub fn can_advance(&self, round: u64, own_zone: ZoneId, q_full: usize) -> bool {
        self.certified_count(round) >= q_full
            && self.certified_digest(round, own_zone).is_some()
    }

    pub fn equivocations(&self) -> &[EquivocationEvidence] {
        &self.equivocations
    }

    pub fn highest_certified_round(&self) -> u64 {
        self.certified_by_round.keys().next_back().copied().unwrap_or(0)
    }

    /// Highest round with a certified vertex from this zone (0 if none).
    pub fn latest_certified(&self, zone: ZoneId) -> u64 {
        self.latest_certified_round.get(&zone).copied().unwrap_or(0)
    }

    /// Highest own-zone block number referenced by any certified vertex
    /// (recovery: blocks after this must be re-distributed).
    pub fn max_zone_number(&self, zone: ZoneId) -> u64 {
        self.next_number.get(&zone).map_or(0, |n| n - 1)
    }

    pub fn vertices_iter(&self) -> impl Iterator<Item = (&Digest, &Shared<Vertex>)> {
        self.vertices.iter()
    }

    pub fn certs_iter(&self) -> impl Iterator<Item = (&Digest, &Certificate)> {
        self.certs.iter()
    }

    /// Portable copy for recovery snapshots.
    pub fn export(&self) -> DagSnapshot {
        DagSnapshot {
            vertices: self.vertices.values().cloned().collect(),
            certs: self.certs.values().cloned().collect(),
        }
    }

    /// Rebuilds a view from a snapshot; vote locks start clean (the new
    /// member has endorsed nothing) but certified state is fully indexed.
    pub fn restore(me: NodeId, snapshot: DagSnapshot) -> DagView {
        let mut view = DagView::new(me);
        for vertex in snapshot.vertices {
            view.store_vertex(vertex);
        }
        for cert in snapshot.certs {
            let subject = cert.subject;
            if view.vertices.contains_key(&subject) {
                view.certify(subject, cert);
            } else {
                view.pending_certs.insert(subject, cert);
            }
        }
        view
    }
}

#[derive(Debug, Clone, Default)]
pub struct DagSnapshot {
    pub vertices: Vec<Shared<Vertex>>,
    pub certs: Vec<Certificate>,
}

impl Encode for DagSnapshot {
    fn encode(&self, out: &mut Vec<u8>) {
        self.vertices.encode(out);
        self.certs.encode(out);
    }
}
