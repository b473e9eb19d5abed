//! Committee-member state machine: one node that is simultaneously the
//! proposer of its zone's local chain, a replica in the availability
//! mempool, a DAG participant, a main-chain executor, and (scheme
//! permitting) a 2PC coordinator or participant. A standby runs the same
//! type in a dormant mode and takes the seat through the view-change and
//! recovery flow.
//!
//! Recovery correctness leans on two facts. First, a downloaded snapshot is
//! trusted only when its state digest is pinned by a processing certificate
//! (`q_proc` signatures over the proof core), so a lying source is rejected
//! wholesale. Second, from the moment of promotion every protocol message is
//! queued and replayed after recovery completes; combined with the
//! checkpoint rule (at most `q_proc - 1` members report a block the
//! checkpoint excludes) this guarantees at least `q_proc` honest members
//! will still emit proof shares for any main block the recovered member has
//! to re-process, so its zone's processing certificates keep forming.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{Message, TimerKind, World};
use crate::alt::{CoordAction, Coordinator, Participant};
use crate::audit::{select_checkpoint, NewView, RecoveryPackage, ViewChangeCollector};
use crate::consensus::{CommitState, OrderedBatch};
use crate::crypto::{Digest, SigToken};
use crate::dag::{CertOutcome, DagView, Vertex, VoteDecision};
use crate::localchain::{ProcPayload, Proposer, ValidationOutcome, Validator};
use crate::mempool::Mempool;
use crate::metrics::Outcome;
use crate::processing::{materialize, payload_digest, MainProcessor, Proof};
use crate::simnet::{Actor, Ctx, SimTime};
use crate::statedb::{StateDB, SyncEntry};
use crate::types::{CertKind, Certificate, NodeId, Scheme, Shared, ZoneId};

type NodeCtx<'a> = Ctx<'a, Message, TimerKind, World>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Active,
    Standby,
    Recovering,
}

/// Transient state of a promoted standby rebuilding the member role.
#[derive(Default)]
struct Recovery {
    digest_replies: Vec<(NodeId, BTreeMap<u64, Digest>)>,
    checkpoint: Option<(u64, Digest)>,
    /// Members whose digest history matched the checkpoint, tried in turn.
    candidates: Vec<NodeId>,
    next_candidate: usize,
    snapshot_done: bool,
    /// Own zone's certified sync payloads from the snapshot source.
    zone_procs: Vec<(u64, ProcPayload, Shared<Proof>, Certificate)>,
    chain_replies: Vec<(NodeId, Vec<(Shared<crate::localchain::LocalBlock>, Certificate)>, Vec<(u64, ProcPayload)>)>,
}

pub struct CommitteeNode {
    zone: ZoneId,
    me: NodeId,
    mode: Mode,
    proposer: Proposer,
    mempool: Mempool,
    dag: DagView,
    commit: CommitState,
    processor: MainProcessor,

    /// Round of this member's latest own vertex (0 = none yet; also the
    /// post-recovery state, which triggers the rejoin round rule).
    round: u64,
    last_vertex_at: SimTime,
    current_vertex: Option<(Digest, Shared<Vertex>)>,
    /// Certified data vertices not yet ordered by consensus.
    uncommitted_data: BTreeSet<Digest>,
    /// Vertices we could not vote on yet (missing blocks or parents).
    pending_votes: BTreeMap<Digest, Shared<Vertex>>,

    pending_batches: VecDeque<OrderedBatch>,
    /// Last fetch time per missing block, to pace re-fetches.
    fetch_times: BTreeMap<(ZoneId, u64), SimTime>,
    vertex_fetch_times: BTreeMap<Digest, SimTime>,
    busy_until: SimTime,
    /// Processed main blocks awaiting their proof certificate:
    /// k -> (per-zone payloads, own proof).
    pending_done: BTreeMap<u64, (BTreeMap<ZoneId, ProcPayload>, Shared<Proof>)>,
    proc_shares: BTreeMap<u64, BTreeMap<NodeId, SigToken>>,
    /// Shares that arrived before this member finished processing k.
    pending_shares: BTreeMap<u64, Vec<(NodeId, Shared<Proof>, SigToken)>>,
    /// Certified processing results: k -> (payloads, proof, certificate).
    proc_archive: BTreeMap<u64, (BTreeMap<ZoneId, ProcPayload>, Shared<Proof>, Certificate)>,
    /// Own-zone block number -> main block k that included it.
    number_index: BTreeMap<u64, u64>,
    /// Main blocks whose sync entries already reached the proposer.
    applied_procs: BTreeSet<u64>,
    /// Committed block sequence as processed: (k, zone, number).
    tau: Vec<(u64, ZoneId, u64)>,

    coordinator: Option<Coordinator>,
    participant: Participant,

    collector: Option<(u32, ViewChangeCollector)>,
    recovery: Option<Recovery>,
    queued: VecDeque<(NodeId, Message)>,
    crashed: bool,
}

impl CommitteeNode {
    pub fn full_member(zone: ZoneId, me: NodeId, world: &World) -> CommitteeNode {
        let mut node = CommitteeNode::base(zone, me, world);
        node.mode = Mode::Active;
        node
    }

    pub fn standby(zone: ZoneId, me: NodeId, world: &World) -> CommitteeNode {
        CommitteeNode::base(zone, me, world)
    }

    fn base(zone: ZoneId, me: NodeId, world: &World) -> CommitteeNode {
        let zones: Vec<ZoneId> = world.topo.zones.iter().map(|z| z.zone).collect();
        let coordinator = (world.scheme == Scheme::Performance
            && world.topo.coordinator() == me)
            .then(|| Coordinator::new(me));
        CommitteeNode {
            zone,
            me,
            mode: Mode::Standby,
            proposer: Proposer::new(
                zone,
                me,
                world.zone_genesis[&zone].clone(),
                world.params.batch_size,
            ),
            mempool: Mempool::new(zone, me),
            dag: DagView::new(me),
            commit: CommitState::new(&world.topo),
            processor: MainProcessor::new(
                world.main_genesis.clone(),
                zones,
                world.params.scheduling,
            ),
            round: 0,
            last_vertex_at: 0,
            current_vertex: None,
            uncommitted_data: BTreeSet::new(),
            pending_votes: BTreeMap::new(),
            pending_batches: VecDeque::new(),
            fetch_times: BTreeMap::new(),
            busy_until: 0,
            pending_done: BTreeMap::new(),
            proc_shares: BTreeMap::new(),
            pending_shares: BTreeMap::new(),
            proc_archive: BTreeMap::new(),
            number_index: BTreeMap::new(),
            applied_procs: BTreeSet::new(),
            tau: Vec::new(),
            coordinator,
            participant: Participant::new(),
            collector: None,
            recovery: None,
            queued: VecDeque::new(),
            crashed: false,
        }
    }

    fn others(&self, world: &World) -> Vec<NodeId> {
        world.fulls().into_iter().filter(|&n| n != self.me).collect()
    }

    fn locals(&self, world: &World) -> Vec<NodeId> {
        world.zone_locals(self.zone)
    }

    // ----- local-chain proposer side -----

    fn handle_submit(&mut self, ctx: &mut NodeCtx<'_>, tx: crate::types::Transaction) {
        if ctx.world.scheme == Scheme::Performance {
            self.handle_submit_2pc(ctx, tx);
            return;
        }
        let txid = tx.id;
        if self.proposer.admit(tx).is_err() {
            let client = ctx.world.client_node(txid);
            ctx.send(client, Message::OutcomeEvent { txid, outcome: Outcome::Rejected });
            return;
        }
        if self.proposer.batch_full() {
            self.try_cut(ctx);
        }
    }

    fn try_cut(&mut self, ctx: &mut NodeCtx<'_>) {
        if ctx.world.deposed.contains(&self.me) {
            return;
        }
        if let Some(block) = self.proposer.cut() {
            let locals = self.locals(ctx.world);
            ctx.broadcast(locals, Message::Proposal { block });
        }
    }

    fn on_endorse(
        &mut self,
        ctx: &mut NodeCtx<'_>,
        from: NodeId,
        _number: u64,
        digest: Digest,
        token: SigToken,
    ) {
        let locals = self.locals(ctx.world);
        let q_local = ctx.world.topo.q_local();
        let Some(cb) = self.proposer.add_endorsement(
            from,
            digest,
            token,
            &ctx.world.crypto,
            &locals,
            q_local,
        ) else {
            return;
        };
        ctx.broadcast(
            locals,
            Message::LocalCommit { number: cb.block.number, cert: cb.cert.clone() },
        );
        if ctx.world.scheme != Scheme::Performance {
            self.mempool.add_own(cb.block.clone(), cb.cert.clone(), &mut ctx.world.crypto);
            let others = self.others(ctx.world);
            ctx.broadcast(
                others,
                Message::Replicate { block: cb.block, cert_local: cb.cert },
            );
            self.try_vertex(ctx);
        }
        if self.proposer.batch_full() {
            self.try_cut(ctx);
        }
    }

    // ----- availability mempool side -----

    fn on_replicate(
        &mut self,
        ctx: &mut NodeCtx<'_>,
        from: NodeId,
        block: Shared<crate::localchain::LocalBlock>,
        cert_local: Certificate,
    ) {
        let zone_locals = ctx.world.zone_locals(block.zone);
        let q_local = ctx.world.topo.q_local();
        let Some(avail_digest) = self.mempool.store_replicated(
            block.clone(),
            cert_local.clone(),
            &ctx.world.crypto,
            &zone_locals,
            q_local,
        ) else {
            return;
        };
        let signed = Certificate::signing_digest(CertKind::Avail, &avail_digest);
        let token = ctx.world.crypto.sign(self.me, &signed);
        ctx.send(from, Message::Ack { zone: block.zone, number: block.number, token });
        if ctx.world.scheme == Scheme::Availability {
            let locals = self.locals(ctx.world);
            ctx.broadcast(locals, Message::ForwardBlock { block, cert_local });
        }
        self.retry_pending_votes(ctx);
        self.try_process(ctx);
    }

    fn on_ack(&mut self, ctx: &mut NodeCtx<'_>, from: NodeId, number: u64, token: SigToken) {
        let fulls = ctx.world.fulls();
        let q_full = ctx.world.topo.q_full();
        let Some(cert) =
            self.mempool.on_ack(number, from, token, &ctx.world.crypto, &fulls, q_full)
        else {
            return;
        };
        let locals = self.locals(ctx.world);
        ctx.broadcast(locals, Message::AvailNotice { number, cert });
        self.try_vertex(ctx);
    }

    // ----- DAG side -----

    /// Rejoin round rule: above both the last round the committee completed
    /// and this zone's own latest certified vertex, once the previous round
    /// supports parent references. None while parents are not ready.
    fn rejoin_target(&self, q_full: usize) -> Option<u64> {
        let mut r_q = 0;
        for r in 1..=self.dag.highest_certified_round() {
            if self.dag.certified_count(r) >= q_full {
                r_q = r;
            }
        }
        let t = (r_q + 1).max(self.dag.latest_certified(self.zone) + 1);
        if t > 1 && self.dag.certified_count(t - 1) < q_full {
            return None;
        }
        Some(t)
    }

    fn try_vertex(&mut self, ctx: &mut NodeCtx<'_>) {
        if self.mode != Mode::Active || ctx.world.deposed.contains(&self.me) {
            return;
        }
        if ctx.world.scheme == Scheme::Performance {
            return;
        }
        let q_full = ctx.world.topo.q_full();
        let target = if self.round == 0 {
            match self.rejoin_target(q_full) {
                Some(t) => t,
                None => return,
            }
        } else {
            if !self.dag.can_advance(self.round, self.zone, q_full) {
                return;
            }
            self.round + 1
        };
        let have = self.mempool.has_candidates();
        let force = ctx.now.saturating_sub(self.last_vertex_at)
            >= ctx.world.params.max_vertex_delay_us;
        if !have && !(force && self.work_pending(ctx)) {
            return;
        }
        let digests = if have {
            self.mempool
                .take_candidates(ctx.world.params.max_digests_per_vertex as usize)
        } else {
            Vec::new()
        };
        self.make_vertex(ctx, target, digests);
    }

    fn make_vertex(&mut self, ctx: &mut NodeCtx<'_>, target: u64, digests: Vec<(u64, Digest)>) {
        let vertex =
            self.dag.create_vertex(self.zone, target, digests, &mut ctx.world.crypto);
        let digest = vertex.structural_digest();
        self.current_vertex = Some((digest, vertex.clone()));
        self.last_vertex_at = ctx.now;
        self.round = target;
        let others = self.others(ctx.world);
        ctx.broadcast(others, Message::VertexMsg { vertex });
    }

    /// Escape hatch for a round collision after a takeover: if this member's
    /// current vertex stays uncertified well past the retransmission window,
    /// the slot was likely vote-locked to the predecessor's in-flight vertex.
    /// Re-issue the same block digests in a fresh, later round.
    fn rebuild_stalled_vertex(&mut self, ctx: &mut NodeCtx<'_>) {
        let stalled = ctx.now.saturating_sub(self.last_vertex_at)
            >= 2 * ctx.world.params.max_vertex_delay_us;
        if !stalled {
            return;
        }
        let Some((digest, vertex)) = self.current_vertex.clone() else { return };
        if self.dag.is_certified(&digest) {
            return;
        }
        let q_full = ctx.world.topo.q_full();
        let Some(target) = self.rejoin_target(q_full) else { return };
        if target <= vertex.round {
            return;
        }
        self.make_vertex(ctx, target, vertex.digests.clone());
    }

    /// Still-useful work that justifies producing empty round-driving
    /// vertices: undelivered outcomes anywhere, or submissions still to come.
    fn work_pending(&self, ctx: &NodeCtx<'_>) -> bool {
        ctx.now <= ctx.world.submit_end_us || !ctx.world.ledger.all_decided()
    }

    /// One vote attempt for a received vertex. Returns false when the
    /// decision is still blocked on missing blocks or parents.
    fn consider_vertex(
        &mut self,
        ctx: &mut NodeCtx<'_>,
        vertex: &Shared<Vertex>,
        reply_to: NodeId,
    ) -> bool {
        let expected = ctx.world.member_of(vertex.zone);
        let q_full = ctx.world.topo.q_full();
        let max_digests = ctx.world.params.max_digests_per_vertex as usize;
        let decision = {
            let mp = &self.mempool;
            self.dag.consider(
                vertex,
                expected,
                &ctx.world.crypto,
                &ctx.world.committee,
                q_full,
                max_digests,
                &|z, n, d| mp.holds(z, n, d),
            )
        };
        match decision {
            VoteDecision::Vote(digest) => {
                self.dag.record_vote(vertex, digest);
                let signed = Certificate::signing_digest(CertKind::Inclusion, &digest);
                let token = ctx.world.crypto.sign(self.me, &signed);
                ctx.send(vertex.creator, Message::Vote { subject: digest, token });
                true
            }
            VoteDecision::AlreadyVoted => {
                // Retransmitted vertex: re-send the vote so the creator can
                // complete its certificate after drops.
                let digest = vertex.structural_digest();
                let signed = Certificate::signing_digest(CertKind::Inclusion, &digest);
                let token = ctx.world.crypto.sign(self.me, &signed);
                ctx.send(vertex.creator, Message::Vote { subject: digest, token });
                true
            }
            VoteDecision::NeedBlocks(wants) => {
                // Paced per block: an unsatisfiable want (e.g. a fabricated
                // digest) must not turn the retry path into a message loop.
                let wants = self.pace_block_fetch(ctx.now, ctx.world.params.delta_sync_us, wants);
                if !wants.is_empty() {
                    ctx.send(reply_to, Message::FetchBlocks { wants });
                }
                false
            }
            VoteDecision::NeedParents(wants) => {
                let wants = self.pace_vertex_fetch(ctx.now, ctx.world.params.delta_sync_us, wants);
                if !wants.is_empty() {
                    ctx.send(reply_to, Message::FetchVertices { wants });
                }
                false
            }
            VoteDecision::Reject(_) => true,
        }
    }

    fn on_vertex(&mut self, ctx: &mut NodeCtx<'_>, from: NodeId, vertex: Shared<Vertex>) {
        let digest = vertex.structural_digest();
        if !self.consider_vertex(ctx, &vertex, from) {
            self.pending_votes.insert(digest, vertex);
        }
        self.after_dag_progress(ctx);
    }

    fn retry_pending_votes(&mut self, ctx: &mut NodeCtx<'_>) {
        let pending: Vec<(Digest, Shared<Vertex>)> =
            self.pending_votes.iter().map(|(d, v)| (*d, v.clone())).collect();
        for (digest, vertex) in pending {
            let creator = vertex.creator;
            if self.consider_vertex(ctx, &vertex, creator) {
                self.pending_votes.remove(&digest);
            }
        }
    }

    fn on_vote(&mut self, ctx: &mut NodeCtx<'_>, from: NodeId, subject: Digest, token: SigToken) {
        let fulls = ctx.world.fulls();
        let q_full = ctx.world.topo.q_full();
        let Some(cert) =
            self.dag.add_vote(subject, from, token, &ctx.world.crypto, &fulls, q_full)
        else {
            return;
        };
        if self.current_vertex.as_ref().is_some_and(|(d, _)| *d == subject) {
            self.current_vertex = None;
        }
        self.note_certified(subject);
        let others = self.others(ctx.world);
        ctx.broadcast(others, Message::CertMsg { cert });
        self.after_dag_progress(ctx);
    }

    fn on_cert(&mut self, ctx: &mut NodeCtx<'_>, from: NodeId, cert: Certificate) {
        let subject = cert.subject;
        let q_full = ctx.world.topo.q_full();
        match self.dag.add_cert(cert, &ctx.world.crypto, &ctx.world.committee, q_full) {
            CertOutcome::Added => {
                if self.current_vertex.as_ref().is_some_and(|(d, _)| *d == subject) {
                    self.current_vertex = None;
                }
                self.note_certified(subject);
                self.after_dag_progress(ctx);
            }
            CertOutcome::UnknownVertex => {
                let wants =
                    self.pace_vertex_fetch(ctx.now, ctx.world.params.delta_sync_us, vec![subject]);
                if !wants.is_empty() {
                    ctx.send(from, Message::FetchVertices { wants });
                }
            }
            CertOutcome::AlreadyHad | CertOutcome::Invalid => {}
        }
    }

    fn note_certified(&mut self, subject: Digest) {
        if let Some(v) = self.dag.vertex(&subject) {
            if !v.digests.is_empty() {
                self.uncommitted_data.insert(subject);
            }
        }
    }

    fn on_blocks_reply(
        &mut self,
        ctx: &mut NodeCtx<'_>,
        blocks: Vec<(Shared<crate::localchain::LocalBlock>, Certificate)>,
    ) {
        let q_local = ctx.world.topo.q_local();
        for (block, cert_local) in blocks {
            let zone_locals = ctx.world.zone_locals(block.zone);
            self.mempool.store_replicated(
                block,
                cert_local,
                &ctx.world.crypto,
                &zone_locals,
                q_local,
            );
        }
        self.retry_pending_votes(ctx);
        self.try_process(ctx);
        self.after_dag_progress(ctx);
    }

    fn on_vertices_reply(&mut self, ctx: &mut NodeCtx<'_>, vertices: Vec<Shared<Vertex>>) {
        for v in vertices {
            let digest = self.dag.store_vertex(v);
            if self.dag.is_certified(&digest) {
                self.note_certified(digest);
            }
        }
        self.retry_pending_votes(ctx);
        self.after_dag_progress(ctx);
    }

    fn after_dag_progress(&mut self, ctx: &mut NodeCtx<'_>) {
        self.try_advance_consensus(ctx);
        self.try_vertex(ctx);
    }

    // ----- consensus and processing -----

    fn try_advance_consensus(&mut self, ctx: &mut NodeCtx<'_>) {
        let batches = self.commit.try_commit(&self.dag);
        for batch in batches {
            for v in &batch.vertices {
                self.uncommitted_data.remove(&v.structural_digest());
            }
            self.pending_batches.push_back(batch);
        }
        self.try_process(ctx);
    }

    fn try_process(&mut self, ctx: &mut NodeCtx<'_>) {
        loop {
            let Some(front) = self.pending_batches.front() else { return };
            let batch = front.clone();
            let mat = {
                let mp = &self.mempool;
                materialize(&batch, &|z, n| mp.get(z, n).map(|s| s.block.clone()))
            };
            match mat {
                Err(e) => {
                    ctx.world.integrity.push(e.to_string());
                    self.pending_batches.pop_front();
                }
                Ok(Err(missing)) => {
                    // Fetch from the whole committee (an availability quorum
                    // holds every certified block), paced per block.
                    let delta = ctx.world.params.delta_sync_us;
                    let wants: Vec<(ZoneId, u64)> = missing
                        .into_iter()
                        .filter(|key| {
                            let due = self
                                .fetch_times
                                .get(key)
                                .is_none_or(|&t| ctx.now >= t + delta);
                            if due {
                                self.fetch_times.insert(*key, ctx.now);
                            }
                            due
                        })
                        .collect();
                    if !wants.is_empty() {
                        let others = self.others(ctx.world);
                        ctx.broadcast(others, Message::FetchBlocks { wants });
                    }
                    return;
                }
                Ok(Ok(blocks)) => {
                    match self.processor.process(&batch, &blocks, self.me, &ctx.world.params) {
                        Err(e) => {
                            ctx.world.integrity.push(e.to_string());
                            self.pending_batches.pop_front();
                        }
                        Ok(out) => {
                            self.pending_batches.pop_front();
                            for o in &out.outcomes {
                                if let Some(kind) = o.interference {
                                    ctx.world.interference.entry(o.txid).or_insert(kind);
                                }
                            }
                            self.tau.extend(
                                batch.blocks.iter().map(|&(z, n, _)| (out.k, z, n)),
                            );
                            self.busy_until = self.busy_until.max(ctx.now) + out.cost_us;
                            self.pending_done
                                .insert(out.k, (out.payloads, Shared::new(out.proof)));
                            ctx.timer_at(self.busy_until, TimerKind::ProcessingDone { k: out.k });
                        }
                    }
                }
            }
        }
    }

    fn on_processing_done(&mut self, ctx: &mut NodeCtx<'_>, k: u64) {
        let Some((payloads, proof)) = self.pending_done.get(&k) else { return };
        let proof = proof.clone();
        let own_ents = payloads.get(&self.zone).map(|p| p.ents.clone()).unwrap_or_default();
        let core = proof.core_digest();
        let signed = Certificate::signing_digest(CertKind::Proc, &core);
        let token = ctx.world.crypto.sign(self.me, &signed);
        let others = self.others(ctx.world);
        ctx.broadcast(others, Message::ProofShare { proof: proof.clone(), token: token.clone() });
        if !self.applied_procs.contains(&k) {
            self.proposer.apply_proc(k, own_ents);
            self.applied_procs.insert(k);
        }
        self.add_share(ctx, k, self.me, proof, token);
        for (from, pf, tk) in self.pending_shares.remove(&k).unwrap_or_default() {
            self.add_share(ctx, k, from, pf, tk);
        }
        if self.proposer.has_pending_txs() && !self.proposer.has_outstanding() {
            self.try_cut(ctx);
        }
    }

    fn add_share(
        &mut self,
        ctx: &mut NodeCtx<'_>,
        k: u64,
        from: NodeId,
        proof: Shared<Proof>,
        token: SigToken,
    ) {
        if self.proc_archive.contains_key(&k) {
            return;
        }
        let Some((_, own_proof)) = self.pending_done.get(&k) else {
            self.pending_shares.entry(k).or_default().push((from, proof, token));
            return;
        };
        let core = own_proof.core_digest();
        if proof.core_digest() != core {
            if from != self.me {
                ctx.world.proof_mismatches += 1;
            }
            return;
        }
        let signed = Certificate::signing_digest(CertKind::Proc, &core);
        if !ctx.world.fulls().contains(&from)
            || !ctx.world.crypto.verify(from, &signed, &token)
        {
            return;
        }
        let shares = self.proc_shares.entry(k).or_default();
        shares.insert(from, token);
        if shares.len() < ctx.world.topo.q_proc() {
            return;
        }
        let cert = Certificate::new(
            CertKind::Proc,
            core,
            shares.iter().map(|(&n, t)| (n, t.clone())).collect(),
        );
        self.adopt_proc_cert(ctx, k, cert);
    }

    fn adopt_proc_cert(&mut self, ctx: &mut NodeCtx<'_>, k: u64, cert: Certificate) {
        let Some((payloads, proof)) = self.pending_done.remove(&k) else { return };
        let payload = payloads.get(&self.zone).cloned().unwrap_or_default();
        for &n in &payload.own_numbers {
            self.number_index.insert(n, k);
        }
        ctx.world.finals.proc_roots.entry(k).or_default().insert(cert.subject);
        let locals = self.locals(ctx.world);
        ctx.broadcast(
            locals,
            Message::Proc { k, payload, proof: proof.clone(), cert: cert.clone() },
        );
        self.proc_archive.insert(k, (payloads, proof, cert));
        self.proc_shares.remove(&k);
        self.pending_shares.remove(&k);
    }

    // ----- audit re-serving -----

    fn on_avail_query(&mut self, ctx: &mut NodeCtx<'_>, from: NodeId, number: u64) {
        if let Some(stored) = self.mempool.get(self.zone, number) {
            if let Some(cert) = stored.cert_avail.clone() {
                ctx.send(from, Message::AvailNotice { number, cert });
            }
        }
    }

    fn on_proc_query(&mut self, ctx: &mut NodeCtx<'_>, from: NodeId, number: u64) {
        let Some(&k) = self.number_index.get(&number) else { return };
        let Some((payloads, proof, cert)) = self.proc_archive.get(&k) else { return };
        let payload = payloads.get(&self.zone).cloned().unwrap_or_default();
        ctx.send(
            from,
            Message::Proc { k, payload, proof: proof.clone(), cert: cert.clone() },
        );
    }

    // ----- recovery serving (any active member) -----

    fn on_digest_query(&mut self, ctx: &mut NodeCtx<'_>, from: NodeId) {
        let history: Vec<(u64, Digest)> =
            self.processor.digest_history.iter().map(|(&k, &d)| (k, d)).collect();
        ctx.send(from, Message::DigestReply { history });
    }

    fn on_snapshot_request(&mut self, ctx: &mut NodeCtx<'_>, from: NodeId, k: u64) {
        // Serve only when fully caught up, so state, mempool, DAG and commit
        // snapshots are mutually consistent; the requester retries elsewhere.
        let done_k = self.processor.next_k() - 1;
        if !self.pending_batches.is_empty() || !self.pending_done.is_empty() || done_k < k {
            return;
        }
        let Some((_, proof, cert)) = self.proc_archive.get(&done_k).cloned() else { return };
        let requester_zone = match ctx.world.topo.roles().get(&from) {
            Some(&(z, _)) => z,
            None => return,
        };
        let zone_procs: Vec<(u64, ProcPayload, Shared<Proof>, Certificate)> = self
            .proc_archive
            .iter()
            .filter_map(|(&pk, (payloads, pr, c))| {
                payloads
                    .get(&requester_zone)
                    .map(|p| (pk, p.clone(), pr.clone(), c.clone()))
            })
            .collect();
        let package = Shared::new(RecoveryPackage {
            k: done_k,
            prev: self.processor.prev_hash(),
            state: self.processor.db.snapshot_bytes(),
            mempool: self.mempool.export(),
            dag: self.dag.export(),
            commit: self.commit.export(),
        });
        ctx.send(from, Message::SnapshotReply { package, proof, cert, zone_procs });
    }

    // ----- standby and recovery -----

    fn on_fault_claim(&mut self, ctx: &mut NodeCtx<'_>, claim: crate::audit::FaultClaim) {
        if self.mode != Mode::Standby {
            return;
        }
        let view = ctx.world.views[&self.zone];
        let accused = ctx.world.member_of(self.zone);
        if accused == self.me {
            return;
        }
        if self.collector.as_ref().is_none_or(|(v, _)| *v != view) {
            self.collector = Some((
                view,
                ViewChangeCollector::new(
                    self.zone,
                    view,
                    accused,
                    self.me,
                    self.locals(ctx.world),
                    ctx.world.topo.q_local(),
                ),
            ));
        }
        let nv = {
            let (_, collector) = self.collector.as_mut().unwrap();
            collector.add_claim(&claim, &ctx.world.crypto)
        };
        if let Some(nv) = nv {
            self.on_promoted(ctx, nv);
        }
    }

    fn on_promoted(&mut self, ctx: &mut NodeCtx<'_>, nv: NewView) {
        ctx.world.seat(self.zone, self.me, ctx.now);
        ctx.promote(self.zone, self.me);
        self.mode = Mode::Recovering;
        self.recovery = Some(Recovery::default());
        let locals = self.locals(ctx.world);
        ctx.broadcast(locals.clone(), Message::NewViewMsg { nv: nv.clone() });
        let others = self.others(ctx.world);
        ctx.broadcast(others.clone(), Message::NewViewMsg { nv });
        ctx.broadcast(others, Message::DigestQuery);
        ctx.broadcast(locals, Message::ChainRequest { from_height: 0 });
        ctx.timer_in(2 * ctx.world.params.delta_sync_us, TimerKind::RecoveryKick);
    }

    fn on_digest_reply(
        &mut self,
        ctx: &mut NodeCtx<'_>,
        from: NodeId,
        history: Vec<(u64, Digest)>,
    ) {
        let _ = ctx;
        let Some(rec) = self.recovery.as_mut() else { return };
        if rec.snapshot_done || rec.digest_replies.iter().any(|(n, _)| *n == from) {
            return;
        }
        rec.digest_replies.push((from, history.into_iter().collect()));
    }

    fn on_snapshot_reply(
        &mut self,
        ctx: &mut NodeCtx<'_>,
        package: Shared<RecoveryPackage>,
        proof: Shared<Proof>,
        cert: Certificate,
        zone_procs: Vec<(u64, ProcPayload, Shared<Proof>, Certificate)>,
    ) {
        let q_proc = ctx.world.topo.q_proc();
        let Some(rec) = self.recovery.as_mut() else { return };
        if rec.snapshot_done {
            return;
        }
        let Some((ck, _)) = rec.checkpoint else { return };
        let trusted = package.k >= ck
            && proof.k == package.k
            && package.prev == proof.main_block_hash
            && package.commit.next_k == package.k + 1
            && cert.verify(
                &ctx.world.crypto,
                CertKind::Proc,
                &proof.core_digest(),
                &ctx.world.committee,
                q_proc,
            )
            && package.verify(&proof.state_digest);
        if !trusted {
            return;
        }
        let db = match StateDB::from_snapshot_bytes(&package.state) {
            Ok(db) => db,
            Err(e) => {
                ctx.world.integrity.push(format!("undecodable certified snapshot: {e}"));
                return;
            }
        };
        rec.zone_procs = zone_procs
            .into_iter()
            .filter(|(pk, payload, pr, c)| {
                c.verify(
                    &ctx.world.crypto,
                    CertKind::Proc,
                    &pr.core_digest(),
                    &ctx.world.committee,
                    q_proc,
                ) && pr.zone_digests.get(&self.zone) == Some(&payload_digest(*pk, payload))
            })
            .collect();
        rec.snapshot_done = true;
        self.processor.install(db, package.k + 1, package.prev);
        self.dag = DagView::restore(self.me, package.dag.clone());
        self.commit = CommitState::restore(&ctx.world.topo, package.commit.clone());
        let h = self.dag.max_zone_number(self.zone);
        self.mempool.restore(package.mempool.clone(), h + 1);
        self.round = 0;
        self.try_finish_recovery(ctx);
    }

    fn on_chain_reply(
        &mut self,
        ctx: &mut NodeCtx<'_>,
        from: NodeId,
        blocks: Vec<(Shared<crate::localchain::LocalBlock>, Certificate)>,
        procs: Vec<(u64, ProcPayload)>,
    ) {
        let _ = ctx;
        let Some(rec) = self.recovery.as_mut() else { return };
        if rec.chain_replies.iter().any(|(n, _, _)| *n == from) {
            return;
        }
        rec.chain_replies.push((from, blocks, procs));
    }

    fn on_recovery_kick(&mut self, ctx: &mut NodeCtx<'_>) {
        let q_proc = ctx.world.topo.q_proc();
        let member_count = ctx.world.fulls().len();
        let mut snapshot_request: Option<(NodeId, u64)> = None;
        let rechain;
        if let Some(rec) = self.recovery.as_mut() {
            if !rec.snapshot_done {
                if rec.checkpoint.is_none() {
                    let all_idle = rec.digest_replies.len() >= member_count - 1
                        && rec.digest_replies.iter().all(|(_, h)| h.is_empty());
                    if all_idle {
                        // Nothing was ever processed: genesis state stands.
                        rec.snapshot_done = true;
                    } else if let Some((k, digest)) =
                        select_checkpoint(&rec.digest_replies, q_proc)
                    {
                        rec.checkpoint = Some((k, digest));
                        rec.candidates = rec
                            .digest_replies
                            .iter()
                            .filter(|(_, h)| h.get(&k) == Some(&digest))
                            .map(|(n, _)| *n)
                            .collect();
                    }
                }
                if let (Some((k, _)), false) = (rec.checkpoint, rec.snapshot_done) {
                    if !rec.candidates.is_empty() {
                        let c = rec.candidates[rec.next_candidate % rec.candidates.len()];
                        rec.next_candidate += 1;
                        snapshot_request = Some((c, k));
                    }
                }
            }
            rechain = rec.chain_replies.is_empty();
        } else {
            return;
        }
        if let Some((to, k)) = snapshot_request {
            ctx.send(to, Message::SnapshotRequest { k });
        }
        if rechain {
            let locals = self.locals(ctx.world);
            ctx.broadcast(locals, Message::ChainRequest { from_height: 0 });
        }
        self.try_finish_recovery(ctx);
        if self.mode == Mode::Recovering {
            ctx.timer_in(2 * ctx.world.params.delta_sync_us, TimerKind::RecoveryKick);
        }
    }

    /// Replays the zone chain once the snapshot is installed and at least
    /// one local has responded, then switches to active duty.
    fn try_finish_recovery(&mut self, ctx: &mut NodeCtx<'_>) {
        let ready = self
            .recovery
            .as_ref()
            .is_some_and(|r| r.snapshot_done && !r.chain_replies.is_empty());
        if !ready {
            return;
        }
        let rec = self.recovery.take().unwrap();
        let zone_locals = self.locals(ctx.world);
        let q_local = ctx.world.topo.q_local();
        let coordinator = ctx.world.topo.coordinator();

        let mut replies: Vec<_> = rec.chain_replies.iter().collect();
        replies.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
        let mut replayed: Option<Validator> = None;
        for (_, blocks, procs) in replies {
            let mut v = Validator::new(self.zone, self.me, ctx.world.zone_genesis[&self.zone].clone());
            for (k, p) in procs {
                v.store_proc(*k, p.clone());
            }
            for (k, p, _, _) in &rec.zone_procs {
                v.store_proc(*k, p.clone());
            }
            let mut ok = true;
            for (block, cert) in blocks {
                match v.validate(block, block.proposer, &ctx.world.crypto, coordinator) {
                    ValidationOutcome::Endorse(_) => {
                        if v.commit(cert, &ctx.world.crypto, &zone_locals, q_local).is_none() {
                            ok = false;
                            break;
                        }
                    }
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                replayed = Some(v);
                break;
            }
        }
        let Some(mut v) = replayed else {
            // No reply replayed cleanly; keep recovering and retry on the
            // next kick with whatever arrives.
            self.recovery = Some(rec);
            return;
        };

        // Extend with own-zone blocks only the committee saw (published via
        // replication but possibly withheld from some locals).
        let extra: Vec<(Shared<crate::localchain::LocalBlock>, Certificate)> = self
            .mempool
            .own_blocks_from(v.height + 1)
            .into_iter()
            .map(|s| (s.block.clone(), s.cert_local.clone()))
            .collect();
        for (block, cert) in extra {
            match v.validate(&block, block.proposer, &ctx.world.crypto, coordinator) {
                ValidationOutcome::Endorse(_) => {
                    if v.commit(&cert, &ctx.world.crypto, &zone_locals, q_local).is_none() {
                        break;
                    }
                }
                _ => break,
            }
        }

        let procs_map: BTreeMap<u64, Vec<SyncEntry>> =
            v.procs.iter().map(|(&k, p)| (k, p.ents.clone())).collect();
        self.applied_procs = v.procs.keys().copied().collect();
        self.proposer = Proposer::new(
            self.zone,
            self.me,
            ctx.world.zone_genesis[&self.zone].clone(),
            ctx.world.params.batch_size,
        );
        self.proposer.install_chain_state(
            v.height,
            v.tip(),
            v.committed.clone(),
            procs_map,
            v.applied_ks().clone(),
        );

        // Re-replicate committed blocks the main committee has not certified
        // into the DAG yet (the deposed member may have withheld them).
        let h = self.dag.max_zone_number(self.zone);
        let others = self.others(ctx.world);
        for (block, cert) in v.chain.iter().filter(|(b, _)| b.number > h) {
            self.mempool.add_own(block.clone(), cert.clone(), &mut ctx.world.crypto);
            ctx.broadcast(
                others.clone(),
                Message::Replicate { block: block.clone(), cert_local: cert.clone() },
            );
        }

        // Re-serve certified processing results the deposed member may have
        // withheld or corrupted toward the zone.
        for (k, payload, proof, cert) in &rec.zone_procs {
            for &n in &payload.own_numbers {
                self.number_index.insert(n, *k);
            }
            self.proc_archive.entry(*k).or_insert_with(|| {
                (
                    BTreeMap::from([(self.zone, payload.clone())]),
                    proof.clone(),
                    cert.clone(),
                )
            });
            ctx.broadcast(
                zone_locals.clone(),
                Message::Proc {
                    k: *k,
                    payload: payload.clone(),
                    proof: proof.clone(),
                    cert: cert.clone(),
                },
            );
        }

        self.mode = Mode::Active;
        ctx.timer_in(ctx.world.params.batch_timeout_us, TimerKind::BatchTick);
        ctx.timer_in(ctx.world.params.max_vertex_delay_us, TimerKind::VertexTick);
        let queued: Vec<(NodeId, Message)> = self.queued.drain(..).collect();
        for (from, msg) in queued {
            self.on_active_message(ctx, from, msg);
        }
        self.try_vertex(ctx);
    }

    // ----- 2PC (coordinated-commit scheme) -----

    fn handle_submit_2pc(&mut self, ctx: &mut NodeCtx<'_>, tx: crate::types::Transaction) {
        let txid = tx.id;
        match tx.classify() {
            Err(_) => {
                let client = ctx.world.client_node(txid);
                ctx.send(client, Message::OutcomeEvent { txid, outcome: Outcome::Rejected });
            }
            Ok(crate::types::TxType::Global) => {
                let coord = ctx.world.topo.coordinator();
                if coord == self.me {
                    self.begin_2pc(ctx, tx);
                } else {
                    ctx.send(coord, Message::TwoPcForward { tx });
                }
            }
            Ok(crate::types::TxType::Local) => self.admit_local_2pc(ctx, tx),
        }
    }

    fn admit_local_2pc(&mut self, ctx: &mut NodeCtx<'_>, tx: crate::types::Transaction) {
        let Some(tx) = self.participant.admit_or_park(tx) else { return };
        let txid = tx.id;
        if self.proposer.admit(tx).is_err() {
            let client = ctx.world.client_node(txid);
            ctx.send(client, Message::OutcomeEvent { txid, outcome: Outcome::Rejected });
            return;
        }
        if self.proposer.batch_full() {
            self.try_cut(ctx);
        }
    }

    fn begin_2pc(&mut self, ctx: &mut NodeCtx<'_>, tx: crate::types::Transaction) {
        let txid = tx.id;
        let Some(coord) = self.coordinator.as_mut() else { return };
        match coord.begin(tx) {
            Err(_) => {
                let client = ctx.world.client_node(txid);
                ctx.send(client, Message::OutcomeEvent { txid, outcome: Outcome::Rejected });
            }
            Ok(actions) => {
                ctx.timer_in(ctx.world.params.twopc_timeout_us, TimerKind::TwoPcTimeout { txid });
                self.dispatch_coord_actions(ctx, actions);
            }
        }
    }

    fn dispatch_coord_actions(&mut self, ctx: &mut NodeCtx<'_>, actions: Vec<CoordAction>) {
        for action in actions {
            match action {
                CoordAction::Prepare { zone, txid, keys } => {
                    let to = ctx.world.member_of(zone);
                    ctx.send(to, Message::TwoPcPrepare { txid, keys });
                }
                CoordAction::Decide { zone, record } => {
                    let to = ctx.world.member_of(zone);
                    ctx.send(to, Message::TwoPcDecide { record });
                }
                CoordAction::Abort { zone, txid } => {
                    let to = ctx.world.member_of(zone);
                    ctx.send(to, Message::TwoPcAbort { txid });
                }
                CoordAction::Outcome { zone: _, txid, committed } => {
                    let outcome = if committed { Outcome::Committed } else { Outcome::Aborted };
                    let client = ctx.world.client_node(txid);
                    ctx.send(client, Message::OutcomeEvent { txid, outcome });
                }
            }
        }
    }

    fn on_prepare(&mut self, ctx: &mut NodeCtx<'_>, from: NodeId, txid: crate::types::TxId, keys: Vec<crate::types::Key>) {
        let values = self.participant.on_prepare(txid, &keys, &self.proposer.read_view());
        ctx.send(from, Message::TwoPcVote { txid, zone: self.zone, values });
    }

    fn on_decide(&mut self, ctx: &mut NodeCtx<'_>, record: crate::alt::DecisionRecord) {
        let txid = record.txid;
        if !record.verify(&ctx.world.crypto, ctx.world.topo.coordinator()) {
            return;
        }
        self.proposer.admit_decision(record);
        let released = self.participant.release(txid);
        for tx in released {
            self.admit_local_2pc(ctx, tx);
        }
        if self.proposer.batch_full() {
            self.try_cut(ctx);
        }
    }

    fn on_abort(&mut self, ctx: &mut NodeCtx<'_>, txid: crate::types::TxId) {
        let released = self.participant.release(txid);
        for tx in released {
            self.admit_local_2pc(ctx, tx);
        }
    }

    // ----- dispatch -----

    fn on_active_message(&mut self, ctx: &mut NodeCtx<'_>, from: NodeId, msg: Message) {
        match msg {
            Message::Submit { tx } => self.handle_submit(ctx, tx),
            Message::Endorse { number, digest, token } => {
                self.on_endorse(ctx, from, number, digest, token)
            }
            Message::Replicate { block, cert_local } => {
                if ctx.world.scheme != Scheme::Performance {
                    self.on_replicate(ctx, from, block, cert_local);
                }
            }
            Message::Ack { zone, number, token } => {
                if zone == self.zone {
                    self.on_ack(ctx, from, number, token);
                }
            }
            Message::AvailQuery { number } => self.on_avail_query(ctx, from, number),
            Message::VertexMsg { vertex } => self.on_vertex(ctx, from, vertex),
            Message::Vote { subject, token } => self.on_vote(ctx, from, subject, token),
            Message::CertMsg { cert } => self.on_cert(ctx, from, cert),
            Message::FetchBlocks { wants } => {
                let blocks: Vec<_> = wants
                    .into_iter()
                    .filter_map(|(z, n)| {
                        self.mempool.get(z, n).map(|s| (s.block.clone(), s.cert_local.clone()))
                    })
                    .collect();
                if !blocks.is_empty() {
                    ctx.send(from, Message::BlocksReply { blocks });
                }
            }
            Message::BlocksReply { blocks } => self.on_blocks_reply(ctx, blocks),
            Message::FetchVertices { wants } => {
                let vertices: Vec<_> =
                    wants.iter().filter_map(|d| self.dag.vertex(d).cloned()).collect();
                if !vertices.is_empty() {
                    ctx.send(from, Message::VerticesReply { vertices });
                }
            }
            Message::VerticesReply { vertices } => self.on_vertices_reply(ctx, vertices),
            Message::ProofShare { proof, token } => {
                let k = proof.k;
                self.add_share(ctx, k, from, proof, token);
            }
            Message::ProcQuery { number } => self.on_proc_query(ctx, from, number),
            Message::DigestQuery => self.on_digest_query(ctx, from),
            Message::SnapshotRequest { k } => self.on_snapshot_request(ctx, from, k),
            Message::TwoPcForward { tx } => {
                if ctx.world.scheme == Scheme::Performance {
                    self.begin_2pc(ctx, tx);
                }
            }
            Message::TwoPcPrepare { txid, keys } => self.on_prepare(ctx, from, txid, keys),
            Message::TwoPcVote { txid, zone, values } => {
                let actions = match self.coordinator.as_mut() {
                    Some(c) => c.on_vote(txid, zone, values, &mut ctx.world.crypto),
                    None => Vec::new(),
                };
                self.dispatch_coord_actions(ctx, actions);
            }
            Message::TwoPcDecide { record } => self.on_decide(ctx, record),
            Message::TwoPcAbort { txid } => self.on_abort(ctx, txid),
            // Messages addressed to locals or to recovering members.
            _ => {}
        }
    }
}

impl Actor<Message, TimerKind, World> for CommitteeNode {
    fn on_message(&mut self, ctx: &mut NodeCtx<'_>, from: NodeId, msg: Message) {
        match self.mode {
            Mode::Standby => {
                if let Message::FaultClaimMsg { claim } = msg {
                    self.on_fault_claim(ctx, claim);
                }
            }
            Mode::Recovering => match msg {
                Message::DigestReply { history } => self.on_digest_reply(ctx, from, history),
                Message::SnapshotReply { package, proof, cert, zone_procs } => {
                    self.on_snapshot_reply(ctx, package, proof, cert, zone_procs)
                }
                Message::ChainReply { blocks, procs } => {
                    self.on_chain_reply(ctx, from, blocks, procs)
                }
                Message::NewViewMsg { .. } => {}
                other => self.queued.push_back((from, other)),
            },
            Mode::Active => self.on_active_message(ctx, from, msg),
        }
    }

    fn on_timer(&mut self, ctx: &mut NodeCtx<'_>, timer: TimerKind) {
        match timer {
            TimerKind::BatchTick => {
                if self.mode != Mode::Active || ctx.world.deposed.contains(&self.me) {
                    return;
                }
                if self.proposer.has_pending_txs() && !self.proposer.has_outstanding() {
                    self.try_cut(ctx);
                }
                if ctx.now <= ctx.world.submit_end_us || !ctx.world.ledger.all_decided() {
                    ctx.timer_in(ctx.world.params.batch_timeout_us, TimerKind::BatchTick);
                }
            }
            TimerKind::VertexTick => {
                if self.mode != Mode::Active || ctx.world.deposed.contains(&self.me) {
                    return;
                }
                self.try_vertex(ctx);
                self.rebuild_stalled_vertex(ctx);
                // Retransmissions, in case a partition window ate the first
                // copies: current uncertified vertex and unacked own blocks.
                if let Some((digest, vertex)) = self.current_vertex.clone() {
                    if !self.dag.is_certified(&digest) {
                        let others = self.others(ctx.world);
                        ctx.broadcast(others, Message::VertexMsg { vertex });
                    }
                }
                let unacked: Vec<_> = self
                    .mempool
                    .own_blocks_from(1)
                    .into_iter()
                    .filter(|s| s.cert_avail.is_none())
                    .take(3)
                    .map(|s| (s.block.clone(), s.cert_local.clone()))
                    .collect();
                for (block, cert_local) in unacked {
                    let others = self.others(ctx.world);
                    ctx.broadcast(others, Message::Replicate { block, cert_local });
                }
                self.try_process(ctx);
                if ctx.now <= ctx.world.submit_end_us || !ctx.world.ledger.all_decided() {
                    ctx.timer_in(ctx.world.params.max_vertex_delay_us, TimerKind::VertexTick);
                }
            }
            TimerKind::ProcessingDone { k } => self.on_processing_done(ctx, k),
            TimerKind::RecoveryKick => {
                if self.mode == Mode::Recovering {
                    self.on_recovery_kick(ctx);
                }
            }
            TimerKind::TwoPcTimeout { txid } => {
                let actions = match self.coordinator.as_mut() {
                    Some(c) => c.on_timeout(txid),
                    None => Vec::new(),
                };
                self.dispatch_coord_actions(ctx, actions);
            }
            _ => {}
        }
    }

    fn on_crash(&mut self, _world: &mut World, _now: SimTime) {
        self.crashed = true;
    }

    fn at_end(&mut self, world: &mut World, _now: SimTime) {
        if self.crashed || self.mode != Mode::Active || world.deposed.contains(&self.me) {
            return;
        }
        world.finals.main_digest.insert(self.me, self.processor.db.digest());
        world.finals.main_tau.insert(self.me, self.tau.clone());
        world.finals.digest_history.insert(
            self.me,
            self.processor.digest_history.iter().map(|(&k, &d)| (k, d)).collect(),
        );
        let done_k = self.processor.next_k() - 1;
        if world.finals.main_db.as_ref().is_none_or(|(_, k, _)| *k < done_k) {
            world.finals.main_db = Some((self.me, done_k, self.processor.db.clone()));
        }
        world
            .finals
            .equivocations
            .insert(self.me, self.dag.equivocations().len() as u64);

        let mut bytes = self.proposer.committed_state().snapshot_bytes().len() as u64;
        if world.scheme != Scheme::Performance {
            bytes += self.processor.db.snapshot_bytes().len() as u64;
            for (_, s) in self.mempool.blocks() {
                bytes += super::block_wire_bytes(&s.block)
                    + super::cert_wire_bytes(&s.cert_local)
                    + s.cert_avail.as_ref().map_or(0, super::cert_wire_bytes);
            }
            for (_, v) in self.dag.vertices_iter() {
                bytes += super::vertex_wire_bytes(v);
            }
            for (_, c) in self.dag.certs_iter() {
                bytes += super::cert_wire_bytes(c);
            }
        }
        world.finals.storage.insert(self.me, bytes);
    }
}
