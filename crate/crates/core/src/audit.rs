//! Liveness auditing of full members by their zone's locals, view change, and
//! replacement recovery.
//!
//! A full member is the only bridge between its zone and the main chain, so a
//! faulty one can stall the zone silently: forged data is caught by
//! certificate checks, but withheld or delayed relays are invisible to locals
//! unless the member proves progress. Each full member therefore forwards the
//! certificate of every externalized main-chain phase back to its locals, and
//! every local runs a timer per committed block:
//!
//! * availability — replicating the block to the committee, collecting the
//!   acknowledgement certificate and delivering it are one synchronous delay
//!   each, so the budget is `3 * delta_sync` from the local commit;
//! * processing — mempool inclusion evidence rides inside the processing
//!   certificate, leaving consensus (two DAG rounds, four delays) plus proof
//!   exchange and delivery (two delays), so the budget is `6 * delta_sync`
//!   from the availability certificate.
//!
//! A missed deadline is not proof of fault under partial synchrony: the
//! network may be inside an asynchronous window. The block instead moves to a
//! pending list and the local conservatively waits a further `delta_gst`. A
//! certificate arriving inside that window clears the entry and normal
//! operation resumes; a second expiry is conclusive. Each local then signs a
//! fault claim, and `2*f_local + 1` claims collected by the zone's standby
//! form a view-change certificate that deposes the member and seats the
//! standby — fewer claims never suffice, so `f_local` lying locals cannot
//! depose an honest member.
//!
//! The replacement catches up by querying recent state digests from all
//! committee members, trusting the highest main block on which `f_full + 1`
//! digests agree, and downloading the bulk snapshot from a single member,
//! verified against that digest (mismatch means a lying source: retry with
//! another). It then reads the highest own-zone block number already bound
//! into a certified vertex and resumes the protocol by re-replicating every
//! committed local block above that frontier.

use crate::codec::Encode;
use crate::consensus::CommitSnapshot;
use crate::crypto::{CryptoRegistry, Digest, SigToken};
use crate::dag::DagSnapshot;
use crate::mempool::MempoolSnapshot;
use crate::types::{CertKind, Certificate, NodeId, ProtocolParams, ZoneId};
use std::collections::BTreeMap;

/// Externalized main-chain phase a local waits on for a committed block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AuditPhase {
    Avail,
    Proc,
}

impl AuditPhase {
    pub fn label(&self) -> &'static str {
        match self {
            AuditPhase::Avail => "avail",
            AuditPhase::Proc => "proc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditOutcome {
    /// Certificate arrived; the entry is cleared.
    Ok,
    /// Deadline passed; waiting out the GST grace window.
    GstWait,
    /// Grace window passed with no certificate; the member is concluded
    /// faulty.
    Fault,
}

impl AuditOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            AuditOutcome::Ok => "ok",
            AuditOutcome::GstWait => "gst-wait",
            AuditOutcome::Fault => "fault",
        }
    }
}

/// One audit-log line: what a local observed about one block's phase.
#[derive(Debug, Clone)]
pub struct AuditEvent {
    pub member: NodeId,
    pub zone: ZoneId,
    pub number: u64,
    pub phase: AuditPhase,
    pub deadline: u64,
    pub at: u64,
    pub outcome: AuditOutcome,
}

#[derive(Debug, Clone)]
struct PendingEntry {
    phase: AuditPhase,
    deadline: u64,
    gst_deadline: Option<u64>,
}

/// Per-local-member audit state: one timer entry per committed block that has
/// not yet shown the awaited certificate.
///
/// The caller owns the clock: every method that arms a timer returns the
/// absolute deadline, and expiry callbacks carry that deadline back so stale
/// timers (the certificate arrived in between) are ignored.
#[derive(Debug)]
pub struct Auditor {
    pub me: NodeId,
    pub zone: ZoneId,
    delta_avail: u64,
    delta_proc: u64,
    delta_gst: u64,
    entries: BTreeMap<u64, PendingEntry>,
    concluded: bool,
    pub log: Vec<AuditEvent>,
}

impl Auditor {
    pub fn new(me: NodeId, zone: ZoneId, params: &ProtocolParams) -> Auditor {
        Auditor {
            me,
            zone,
            delta_avail: params.delta_avail_us(),
            delta_proc: params.delta_proc_us(),
            delta_gst: params.delta_gst_us,
            entries: BTreeMap::new(),
            concluded: false,
            log: Vec::new(),
        }
    }

    /// A local block committed: start the availability timer. Returns the
    /// deadline to schedule.
    pub fn on_local_commit(&mut self, number: u64, now: u64) -> u64 {
        let deadline = now + self.delta_avail;
        self.entries.insert(
            number,
            PendingEntry { phase: AuditPhase::Avail, deadline, gst_deadline: None },
        );
        deadline
    }

    /// The availability certificate arrived: clear that entry and start the
    /// processing timer. Returns the new deadline, or None if the block was
    /// not being waited on in the availability phase.
    pub fn on_avail_cert(&mut self, number: u64, now: u64) -> Option<u64> {
        match self.entries.get(&number) {
            Some(e) if e.phase == AuditPhase::Avail => {}
            _ => return None,
        }
        let cleared = self.entries.remove(&number).unwrap();
        self.push_event(number, &cleared, now, AuditOutcome::Ok);
        let deadline = now + self.delta_proc;
        self.entries.insert(
            number,
            PendingEntry { phase: AuditPhase::Proc, deadline, gst_deadline: None },
        );
        Some(deadline)
    }

    /// A verified processing certificate covering these own-zone block
    /// numbers arrived. It clears entries in either phase: inclusion in a
    /// processed main block proves availability a fortiori.
    pub fn on_proc_cert(&mut self, numbers: &[u64], now: u64) {
        for n in numbers {
            if let Some(entry) = self.entries.remove(n) {
                self.push_event(*n, &entry, now, AuditOutcome::Ok);
            }
        }
    }

    /// Phase timer fired. If still relevant, the block enters the pending
    /// list and the GST grace timer starts; returns its deadline.
    pub fn on_timer(&mut self, number: u64, deadline: u64, now: u64) -> Option<u64> {
        let entry = self.entries.get_mut(&number)?;
        if entry.deadline != deadline || entry.gst_deadline.is_some() {
            return None;
        }
        let gst = now + self.delta_gst;
        entry.gst_deadline = Some(gst);
        let snap = entry.clone();
        self.push_event(number, &snap, now, AuditOutcome::GstWait);
        Some(gst)
    }

    /// GST grace timer fired. If the certificate still has not arrived the
    /// member is concluded faulty. Returns true exactly once per view, no
    /// matter how many pending blocks expire: one view change covers all.
    pub fn on_gst_timer(&mut self, number: u64, gst_deadline: u64, now: u64) -> bool {
        let relevant = matches!(
            self.entries.get(&number),
            Some(e) if e.gst_deadline == Some(gst_deadline)
        );
        if !relevant {
            return false;
        }
        let entry = self.entries.remove(&number).unwrap();
        self.push_event(number, &entry, now, AuditOutcome::Fault);
        if self.concluded {
            false
        } else {
            self.concluded = true;
            true
        }
    }

    /// Block numbers still awaiting a certificate (pending list plus live
    /// timers).
    pub fn pending_numbers(&self) -> Vec<u64> {
        self.entries.keys().copied().collect()
    }

    pub fn concluded(&self) -> bool {
        self.concluded
    }

    /// View change accepted: drop all entries and reset the conclusion latch.
    /// Returns the numbers that were outstanding so the caller can restart
    /// their availability clocks under the new member.
    pub fn reset_for_new_view(&mut self) -> Vec<u64> {
        self.concluded = false;
        let numbers = self.entries.keys().copied().collect();
        self.entries.clear();
        numbers
    }

    fn push_event(&mut self, number: u64, entry: &PendingEntry, at: u64, outcome: AuditOutcome) {
        self.log.push(AuditEvent {
            member: self.me,
            zone: self.zone,
            number,
            phase: entry.phase,
            deadline: entry.deadline,
            at,
            outcome,
        });
    }
}

/// Digest a local signs to claim its full member faulty in a given view.
pub fn fault_digest(zone: ZoneId, view: u32, accused: NodeId) -> Digest {
    let mut buf = Vec::new();
    "audit-fault".encode(&mut buf);
    zone.encode(&mut buf);
    view.encode(&mut buf);
    accused.encode(&mut buf);
    Digest::of_bytes(&buf)
}

/// One local's signed conclusion that the zone's full member is faulty.
#[derive(Debug, Clone)]
pub struct FaultClaim {
    pub zone: ZoneId,
    pub view: u32,
    pub accused: NodeId,
    pub claimant: NodeId,
    pub token: SigToken,
}

impl FaultClaim {
    pub fn new(
        crypto: &mut CryptoRegistry,
        zone: ZoneId,
        view: u32,
        accused: NodeId,
        claimant: NodeId,
    ) -> FaultClaim {
        let digest = Certificate::signing_digest(CertKind::ViewChange, &fault_digest(zone, view, accused));
        let token = crypto.sign(claimant, &digest);
        FaultClaim { zone, view, accused, claimant, token }
    }

    pub fn verify(&self, crypto: &CryptoRegistry) -> bool {
        let digest =
            Certificate::signing_digest(CertKind::ViewChange, &fault_digest(self.zone, self.view, self.accused));
        crypto.verify(self.claimant, &digest, &self.token)
    }
}

/// New-view announcement: the quorum of fault claims plus the seat handover.
#[derive(Debug, Clone)]
pub struct NewView {
    pub zone: ZoneId,
    pub view: u32,
    pub accused: NodeId,
    pub new_member: NodeId,
    pub cert: Certificate,
}

impl NewView {
    /// Locals accept a new view only with a valid quorum certificate over the
    /// exact (zone, view, accused) they can recompute.
    pub fn verify(&self, crypto: &CryptoRegistry, locals: &[NodeId], quorum: usize) -> bool {
        self.cert.verify(
            crypto,
            CertKind::ViewChange,
            &fault_digest(self.zone, self.view, self.accused),
            locals,
            quorum,
        )
    }
}

/// Standby-side collection of fault claims into a view-change certificate.
#[derive(Debug)]
pub struct ViewChangeCollector {
    zone: ZoneId,
    view: u32,
    accused: NodeId,
    new_member: NodeId,
    locals: Vec<NodeId>,
    quorum: usize,
    claims: BTreeMap<NodeId, SigToken>,
    fired: bool,
}

impl ViewChangeCollector {
    pub fn new(
        zone: ZoneId,
        view: u32,
        accused: NodeId,
        new_member: NodeId,
        locals: Vec<NodeId>,
        quorum: usize,
    ) -> ViewChangeCollector {
        ViewChangeCollector { zone, view, accused, new_member, locals, quorum, claims: BTreeMap::new(), fired: false }
    }

    /// Returns the new-view announcement exactly once, when the quorum-th
    /// distinct valid claim lands. Claims for other views or members, from
    /// non-locals, or with bad signatures are dropped.
    pub fn add_claim(&mut self, claim: &FaultClaim, crypto: &CryptoRegistry) -> Option<NewView> {
        if claim.zone != self.zone || claim.view != self.view || claim.accused != self.accused {
            return None;
        }
        if !self.locals.contains(&claim.claimant) || !claim.verify(crypto) {
            return None;
        }
        self.claims.insert(claim.claimant, claim.token.clone());
        if self.fired || self.claims.len() < self.quorum {
            return None;
        }
        self.fired = true;
        let cert = Certificate::new(
            CertKind::ViewChange,
            fault_digest(self.zone, self.view, self.accused),
            self.claims.iter().map(|(n, t)| (*n, t.clone())).collect(),
        );
        Some(NewView {
            zone: self.zone,
            view: self.view,
            accused: self.accused,
            new_member: self.new_member,
            cert,
        })
    }

    pub fn claim_count(&self) -> usize {
        self.claims.len()
    }
}

/// Picks the checkpoint a recovering member should trust: the highest main
/// block number for which at least `quorum` members report the same state
/// digest. A split at some height (possible only through lies) poisons that
/// height and the scan falls through to the next lower one.
pub fn select_checkpoint(
    responses: &[(NodeId, BTreeMap<u64, Digest>)],
    quorum: usize,
) -> Option<(u64, Digest)> {
    let mut heights: Vec<u64> = responses
        .iter()
        .flat_map(|(_, h)| h.keys().copied())
        .collect();
    heights.sort_unstable();
    heights.dedup();
    for k in heights.into_iter().rev() {
        let mut counts: BTreeMap<Digest, usize> = BTreeMap::new();
        for (_, history) in responses {
            if let Some(d) = history.get(&k) {
                *counts.entry(*d).or_insert(0) += 1;
            }
        }
        let agreed: Vec<&Digest> = counts
            .iter()
            .filter(|(_, c)| **c >= quorum)
            .map(|(d, _)| d)
            .collect();
        if agreed.len() == 1 {
            return Some((k, *agreed[0]));
        }
    }
    None
}

/// Bulk snapshot a recovering member downloads from one committee member
/// after fixing the checkpoint digest. Main state is verified against the
/// quorum-agreed digest; blocks and vertices inside the mempool and DAG
/// snapshots carry their own certificates.
#[derive(Debug, Clone)]
pub struct RecoveryPackage {
    /// Checkpoint main block number: state reflects processing through `k`.
    pub k: u64,
    /// Hash of main block `k`, the chain link for the next proof.
    pub prev: Digest,
    /// Canonical encoding of the main-state database at `k`.
    pub state: Vec<u8>,
    pub mempool: MempoolSnapshot,
    pub dag: DagSnapshot,
    pub commit: CommitSnapshot,
}

impl RecoveryPackage {
    /// True when the carried state matches the quorum-agreed digest. False
    /// means the source lied or corrupted the download: retry with another.
    pub fn verify(&self, expected_state: &Digest) -> bool {
        Digest::of_bytes(&self.state) == *expected_state
    }
}

impl Encode for RecoveryPackage {
    fn encode(&self, out: &mut Vec<u8>) {
        self.k.encode(out);
        self.prev.encode(out);
        self.state.encode(out);
        self.mempool.encode(out);
        self.dag.encode(out);
        self.commit.encode(out);
    }
}
