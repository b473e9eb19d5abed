//! Zone-local member: endorses and commits the zone chain, runs the audit
//! clocks against the zone's committee member, derives client outcomes from
//! certified processing results, and (full-replication scheme) accounts
//! foreign blocks forwarded into the zone.
//!
//! Network jitter can reorder the member's messages, so every certificate
//! that arrives ahead of its block is stashed by number and replayed when
//! the chain catches up; a genuinely lagging local pulls the committed
//! prefix from its peers instead of stalling the zone.

use std::collections::{BTreeMap, BTreeSet};

use super::{Message, TimerKind, World};
use crate::audit::{Auditor, FaultClaim, NewView};
use crate::crypto::Digest;
use crate::localchain::{
    header_digest, BlockEntry, LocalBlock, ProcPayload, RejectReason, ValidationOutcome, Validator,
};
use crate::metrics::Outcome;
use crate::processing::{derive_zone_outcomes, payload_digest, Proof};
use crate::simnet::{Actor, Ctx, SimTime};
use crate::types::{CertKind, Certificate, NodeId, Scheme, Shared, ZoneId};

type NodeCtx<'a> = Ctx<'a, Message, TimerKind, World>;

pub struct LocalNode {
    zone: ZoneId,
    me: NodeId,
    validator: Validator,
    auditor: Auditor,
    audit_enabled: bool,
    /// Proposals waiting for a sync payload (k) to arrive.
    deferred: BTreeMap<u64, Shared<LocalBlock>>,
    /// Proposals that arrived ahead of the chain tip.
    early: BTreeMap<u64, Shared<LocalBlock>>,
    /// Commit certificates that arrived before the proposal was endorsed.
    commits: BTreeMap<u64, Certificate>,
    /// Availability certificates that arrived before the block committed.
    pending_avail: BTreeMap<u64, Certificate>,
    /// Own-zone block number -> main block that processed it.
    number_to_k: BTreeMap<u64, u64>,
    /// Main blocks whose processing result was verified and consumed.
    seen_procs: BTreeSet<u64>,
    /// Verified main-chain linkage per k: (prev hash, main block hash).
    proof_chain: BTreeMap<u64, (Digest, Digest)>,
    /// Views already acted upon (new-view idempotence).
    next_view: u32,
    last_chain_req: Option<SimTime>,
    foreign_seen: BTreeSet<(ZoneId, u64)>,
    foreign_bytes: u64,
    crashed: bool,
}

impl LocalNode {
    pub fn new(zone: ZoneId, me: NodeId, world: &World) -> LocalNode {
        LocalNode {
            zone,
            me,
            validator: Validator::new(zone, me, world.zone_genesis[&zone].clone()),
            auditor: Auditor::new(me, zone, &world.params),
            audit_enabled: world.scheme != Scheme::Performance,
            deferred: BTreeMap::new(),
            early: BTreeMap::new(),
            commits: BTreeMap::new(),
            pending_avail: BTreeMap::new(),
            number_to_k: BTreeMap::new(),
            seen_procs: BTreeSet::new(),
            proof_chain: BTreeMap::new(),
            next_view: 0,
            last_chain_req: None,
            foreign_seen: BTreeSet::new(),
            foreign_bytes: 0,
            crashed: false,
        }
    }

    fn peers(&self, world: &World) -> Vec<NodeId> {
        world
            .zone_locals(self.zone)
            .into_iter()
            .filter(|&n| n != self.me)
            .collect()
    }

    fn chain_block(&self, number: u64) -> Option<&Shared<LocalBlock>> {
        self.validator
            .chain
            .get(number.checked_sub(1)? as usize)
            .map(|(b, _)| b)
    }

    // ----- proposals and commits -----

    fn on_proposal(&mut self, ctx: &mut NodeCtx<'_>, from: NodeId, block: Shared<LocalBlock>) {
        if from != ctx.world.member_of(self.zone) {
            return;
        }
        self.consider_proposal(ctx, block);
    }

    fn consider_proposal(&mut self, ctx: &mut NodeCtx<'_>, block: Shared<LocalBlock>) {
        let member = ctx.world.member_of(self.zone);
        let number = block.number;
        match self.validator.validate(&block, member, &ctx.world.crypto, ctx.world.topo.coordinator()) {
            ValidationOutcome::Endorse(digest) => {
                let signed = Certificate::signing_digest(CertKind::LocalCommit, &digest);
                let token = ctx.world.crypto.sign(self.me, &signed);
                ctx.send(member, Message::Endorse { number, digest, token });
                if let Some(cert) = self.commits.remove(&number) {
                    self.try_commit(ctx, number, cert);
                }
            }
            ValidationOutcome::Defer { .. } => {
                self.deferred.insert(number, block);
            }
            ValidationOutcome::Reject(RejectReason::NumberGap { expected, got })
                if got > expected =>
            {
                self.early.insert(number, block);
                // A one-block gap is ordinary jitter; a wider one means this
                // local missed commits and must pull the prefix from peers.
                if got > expected + 1 {
                    self.request_chain(ctx);
                }
            }
            ValidationOutcome::Reject(_) | ValidationOutcome::Stale => {}
        }
    }

    fn request_chain(&mut self, ctx: &mut NodeCtx<'_>) {
        let pace = ctx.world.params.delta_sync_us;
        if self.last_chain_req.is_some_and(|t| ctx.now < t + pace) {
            return;
        }
        self.last_chain_req = Some(ctx.now);
        let peers = self.peers(ctx.world);
        let from_height = self.validator.height;
        ctx.broadcast(peers, Message::ChainRequest { from_height });
    }

    fn on_local_commit(&mut self, ctx: &mut NodeCtx<'_>, number: u64, cert: Certificate) {
        self.try_commit(ctx, number, cert);
    }

    fn try_commit(&mut self, ctx: &mut NodeCtx<'_>, number: u64, cert: Certificate) {
        if number != self.validator.height + 1 {
            self.commits.insert(number, cert);
            return;
        }
        let locals = ctx.world.zone_locals(self.zone);
        let q_local = ctx.world.topo.q_local();
        match self.validator.commit(&cert, &ctx.world.crypto, &locals, q_local) {
            Some(block) => self.on_committed(ctx, block),
            None => {
                self.commits.insert(number, cert);
            }
        }
    }

    fn on_committed(&mut self, ctx: &mut NodeCtx<'_>, block: Shared<LocalBlock>) {
        let number = block.number;
        if self.audit_enabled {
            let deadline = self.auditor.on_local_commit(number, ctx.now);
            ctx.timer_at(deadline, TimerKind::AuditCheck { number, deadline });
            if let Some(&k) = self.number_to_k.get(&number) {
                // Processing proof already seen: availability is implied and
                // the stashed outcomes can be derived for this block now.
                self.auditor.on_proc_cert(&[number], ctx.now);
                if let Some(payload) = self.validator.procs.get(&k).cloned() {
                    self.emit_outcomes_for(ctx, &payload, Some(number));
                }
            } else if let Some(cert) = self.pending_avail.remove(&number) {
                self.accept_avail(ctx, number, cert);
            }
        }
        if ctx.world.scheme == Scheme::Performance {
            for entry in &block.entries {
                if let BlockEntry::Local { tx, .. } = entry {
                    let client = ctx.world.client_node(tx.id);
                    ctx.send(
                        client,
                        Message::OutcomeEvent { txid: tx.id, outcome: Outcome::Committed },
                    );
                }
            }
        }
        // Chain moved: stashed successors may now apply.
        if let Some(next) = self.early.remove(&(number + 1)) {
            self.consider_proposal(ctx, next);
        }
        if let Some(cert) = self.commits.remove(&(number + 1)) {
            self.try_commit(ctx, number + 1, cert);
        }
    }

    // ----- audit inputs -----

    fn on_avail_notice(&mut self, ctx: &mut NodeCtx<'_>, number: u64, cert: Certificate) {
        if !self.audit_enabled {
            return;
        }
        if self.chain_block(number).is_none() {
            self.pending_avail.insert(number, cert);
            return;
        }
        self.accept_avail(ctx, number, cert);
    }

    fn accept_avail(&mut self, ctx: &mut NodeCtx<'_>, number: u64, cert: Certificate) {
        let Some(block) = self.chain_block(number) else { return };
        let subject = header_digest(self.zone, number, &block.digest());
        let q_full = ctx.world.topo.q_full();
        if !cert.verify(
            &ctx.world.crypto,
            CertKind::Avail,
            &subject,
            &ctx.world.committee,
            q_full,
        ) {
            return;
        }
        if let Some(deadline) = self.auditor.on_avail_cert(number, ctx.now) {
            ctx.timer_at(deadline, TimerKind::AuditCheck { number, deadline });
        }
    }

    fn on_proc(
        &mut self,
        ctx: &mut NodeCtx<'_>,
        k: u64,
        payload: ProcPayload,
        proof: Shared<Proof>,
        cert: Certificate,
    ) {
        if !self.audit_enabled {
            return;
        }
        let q_proc = ctx.world.topo.q_proc();
        let core = proof.core_digest();
        if !cert.verify(&ctx.world.crypto, CertKind::Proc, &core, &ctx.world.committee, q_proc) {
            return;
        }
        if proof.k != k || proof.zone_digests.get(&self.zone) != Some(&payload_digest(k, &payload))
        {
            return;
        }
        ctx.world.finals.proc_roots.entry(k).or_default().insert(cert.subject);
        // Certified main blocks must chain; a certified break is a protocol
        // safety violation, not a node fault.
        if let Some((_, prev_main)) = self.proof_chain.get(&(k.saturating_sub(1))) {
            if k > 0 && *prev_main != proof.prev_hash {
                ctx.world
                    .integrity
                    .push(format!("certified processing results fork at main block {k}"));
            }
        }
        if let Some((next_prev, _)) = self.proof_chain.get(&(k + 1)) {
            if *next_prev != proof.main_block_hash {
                ctx.world
                    .integrity
                    .push(format!("certified processing results fork at main block {}", k + 1));
            }
        }
        self.proof_chain.insert(k, (proof.prev_hash, proof.main_block_hash));
        if !self.seen_procs.insert(k) {
            return;
        }
        for &n in &payload.own_numbers {
            self.number_to_k.insert(n, k);
        }
        self.validator.store_proc(k, payload.clone());
        self.auditor.on_proc_cert(&payload.own_numbers, ctx.now);
        self.emit_outcomes_for(ctx, &payload, None);
        self.retry_deferred(ctx);
    }

    /// Sends client outcomes derived from one sync payload; `only` restricts
    /// to a single block (commit-time catch-up for a late chain).
    fn emit_outcomes_for(
        &mut self,
        ctx: &mut NodeCtx<'_>,
        payload: &ProcPayload,
        only: Option<u64>,
    ) {
        let outcomes = {
            let me = &*self;
            derive_zone_outcomes(payload, &|n| {
                if only.is_some_and(|o| o != n) {
                    return None;
                }
                me.chain_block(n).cloned()
            })
        };
        for o in outcomes {
            let outcome = if o.committed { Outcome::Committed } else { Outcome::Aborted };
            let client = ctx.world.client_node(o.txid);
            ctx.send(client, Message::OutcomeEvent { txid: o.txid, outcome });
        }
    }

    fn retry_deferred(&mut self, ctx: &mut NodeCtx<'_>) {
        let deferred: Vec<Shared<LocalBlock>> = self.deferred.values().cloned().collect();
        self.deferred.clear();
        for block in deferred {
            self.consider_proposal(ctx, block);
        }
    }

    // ----- audit timers and view change -----

    fn on_audit_check(&mut self, ctx: &mut NodeCtx<'_>, number: u64, deadline: u64) {
        let Some(gst) = self.auditor.on_timer(number, deadline, ctx.now) else { return };
        ctx.timer_at(gst, TimerKind::AuditGst { number, deadline: gst });
        // One more chance before concluding: ask the member to re-send the
        // missing certificate (drops happen before stabilization).
        let member = ctx.world.member_of(self.zone);
        ctx.send(member, Message::AvailQuery { number });
        ctx.send(member, Message::ProcQuery { number });
    }

    fn on_audit_gst(&mut self, ctx: &mut NodeCtx<'_>, number: u64, deadline: u64) {
        if !self.auditor.on_gst_timer(number, deadline, ctx.now) {
            return;
        }
        ctx.world.audit_faults += 1;
        let zm = ctx.world.topo.zone(self.zone);
        let Some(standby) = zm.standby else { return };
        let accused = ctx.world.member_of(self.zone);
        if accused == standby {
            return;
        }
        let view = ctx.world.views[&self.zone];
        let claim =
            FaultClaim::new(&mut ctx.world.crypto, self.zone, view, accused, self.me);
        ctx.send(standby, Message::FaultClaimMsg { claim });
    }

    fn on_new_view(&mut self, ctx: &mut NodeCtx<'_>, nv: NewView) {
        if nv.zone != self.zone || nv.view < self.next_view {
            return;
        }
        let locals = ctx.world.zone_locals(self.zone);
        let q_local = ctx.world.topo.q_local();
        if !nv.verify(&ctx.world.crypto, &locals, q_local) {
            return;
        }
        if nv.new_member != ctx.world.member_of(self.zone) {
            return;
        }
        self.next_view = nv.view + 1;
        self.validator.abandon_outstanding();
        self.deferred.clear();
        self.early.clear();
        self.commits.clear();
        self.pending_avail.clear();
        // Restart clocks for blocks still unaccounted: the new member must
        // produce (or re-serve) their certificates from scratch.
        for number in self.auditor.reset_for_new_view() {
            let deadline = self.auditor.on_local_commit(number, ctx.now);
            ctx.timer_at(deadline, TimerKind::AuditCheck { number, deadline });
        }
    }

    // ----- replication accounting and peer catch-up -----

    fn on_forward_block(
        &mut self,
        ctx: &mut NodeCtx<'_>,
        block: Shared<LocalBlock>,
        cert_local: Certificate,
    ) {
        if ctx.world.scheme != Scheme::Availability || block.zone == self.zone {
            return;
        }
        let zone_locals = ctx.world.zone_locals(block.zone);
        let q_local = ctx.world.topo.q_local();
        if !cert_local.verify(
            &ctx.world.crypto,
            CertKind::LocalCommit,
            &block.digest(),
            &zone_locals,
            q_local,
        ) {
            return;
        }
        if self.foreign_seen.insert((block.zone, block.number)) {
            self.foreign_bytes +=
                super::block_wire_bytes(&block) + super::cert_wire_bytes(&cert_local);
        }
    }

    fn on_chain_request(&mut self, ctx: &mut NodeCtx<'_>, from: NodeId, from_height: u64) {
        let blocks: Vec<(Shared<LocalBlock>, Certificate)> = self
            .validator
            .chain
            .iter()
            .filter(|(b, _)| b.number > from_height)
            .cloned()
            .collect();
        let procs: Vec<(u64, ProcPayload)> =
            self.validator.procs.iter().map(|(&k, p)| (k, p.clone())).collect();
        if !blocks.is_empty() || !procs.is_empty() {
            ctx.send(from, Message::ChainReply { blocks, procs });
        }
    }

    fn on_chain_reply(
        &mut self,
        ctx: &mut NodeCtx<'_>,
        blocks: Vec<(Shared<LocalBlock>, Certificate)>,
        procs: Vec<(u64, ProcPayload)>,
    ) {
        for (k, p) in procs {
            self.validator.store_proc(k, p);
        }
        let locals = ctx.world.zone_locals(self.zone);
        let q_local = ctx.world.topo.q_local();
        for (block, cert) in blocks {
            if block.number != self.validator.height + 1 {
                continue;
            }
            match self.validator.validate(
                &block,
                block.proposer,
                &ctx.world.crypto,
                ctx.world.topo.coordinator(),
            ) {
                ValidationOutcome::Endorse(_) => {
                    match self.validator.commit(&cert, &ctx.world.crypto, &locals, q_local) {
                        Some(committed) => self.on_committed(ctx, committed),
                        None => break,
                    }
                }
                _ => break,
            }
        }
        self.retry_deferred(ctx);
    }
}

impl Actor<Message, TimerKind, World> for LocalNode {
    fn on_message(&mut self, ctx: &mut NodeCtx<'_>, from: NodeId, msg: Message) {
        match msg {
            Message::Proposal { block } => self.on_proposal(ctx, from, block),
            Message::LocalCommit { number, cert } => self.on_local_commit(ctx, number, cert),
            Message::AvailNotice { number, cert } => self.on_avail_notice(ctx, number, cert),
            Message::Proc { k, payload, proof, cert } => {
                self.on_proc(ctx, k, payload, proof, cert)
            }
            Message::NewViewMsg { nv } => self.on_new_view(ctx, nv),
            Message::ForwardBlock { block, cert_local } => {
                self.on_forward_block(ctx, block, cert_local)
            }
            Message::ChainRequest { from_height } => {
                self.on_chain_request(ctx, from, from_height)
            }
            Message::ChainReply { blocks, procs } => self.on_chain_reply(ctx, blocks, procs),
            _ => {}
        }
    }

    fn on_timer(&mut self, ctx: &mut NodeCtx<'_>, timer: TimerKind) {
        match timer {
            TimerKind::AuditCheck { number, deadline } => {
                self.on_audit_check(ctx, number, deadline)
            }
            TimerKind::AuditGst { number, deadline } => self.on_audit_gst(ctx, number, deadline),
            _ => {}
        }
    }

    fn on_crash(&mut self, _world: &mut World, _now: SimTime) {
        self.crashed = true;
    }

    fn at_end(&mut self, world: &mut World, _now: SimTime) {
        world.audit_log.append(&mut self.auditor.log);
        if self.crashed {
            return;
        }
        self.validator.flush_unapplied_syncs();
        world.finals.zone_digest.insert(
            self.me,
            (self.zone, self.validator.committed.digest(), self.validator.height),
        );
        let height = self.validator.height;
        if world
            .finals
            .zone_db
            .get(&self.zone)
            .is_none_or(|(_, h, _)| *h < height)
        {
            world
                .finals
                .zone_db
                .insert(self.zone, (self.me, height, self.validator.committed.clone()));
        }
        world.finals.local_chain.insert(
            self.me,
            self.validator.chain.iter().map(|(b, _)| (b.number, b.digest())).collect(),
        );
        let mut bytes = self.validator.committed.snapshot_bytes().len() as u64;
        for (b, c) in &self.validator.chain {
            bytes += super::block_wire_bytes(b) + super::cert_wire_bytes(c);
        }
        bytes += self.foreign_bytes;
        world.finals.storage.insert(self.me, bytes);
    }
}
