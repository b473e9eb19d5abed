//! Event-driven node state machines wired onto the simulated network: the
//! committee member (full member / standby / recovering), the zone-local
//! validator-auditor, and the workload client, plus the Byzantine adapters
//! that wrap a committee member and distort its outbound traffic.
//!
//! All behavior is message- and timer-driven; the only shared state is the
//! [`World`]: topology, protocol parameters, the signature registry, the
//! current committee seating, and run-wide accounting (outcome ledger,
//! view-change log, integrity violations, final-state collection). Nodes
//! never read each other's protocol state through the world — it acts as the
//! membership directory and the experiment's measurement plane.
//!
//! Certificate verification uses two signer populations on purpose: new
//! certificates are *collected* only from current committee members, while
//! received certificates are *verified* against everyone ever seated
//! ([`World::committee`]) so that a view change cannot retroactively
//! invalidate certificates formed before it.
//!
//! Message sizes follow a fixed structural wire model (constants below), so
//! bandwidth accounting is deterministic and independent of in-memory
//! representation.

mod adapters;
mod client;
mod committee;
mod local;

pub use adapters::ByzAdapter;
pub use client::ClientNode;
pub use committee::CommitteeNode;
pub use local::LocalNode;

use std::collections::{BTreeMap, BTreeSet};

use crate::alt::DecisionRecord;
use crate::audit::{AuditEvent, FaultClaim, NewView, RecoveryPackage};
use crate::crypto::{CryptoRegistry, Digest, SigToken};
use crate::dag::Vertex;
use crate::localchain::{LocalBlock, ProcPayload};
use crate::metrics::{Outcome, OutcomeLedger};
use crate::processing::{InterferenceKind, Proof};
use crate::simnet::{DelayModel, FaultKind, FaultSpec, Simulation, Wire};
use crate::statedb::StateDB;
use crate::types::{
    Certificate, Key, NodeId, ProtocolParams, Scheme, Shared, Topology, Transaction, TxId, ZoneId,
};
use crate::workload::{plan_submissions, TxGen, WorkloadConfig};

/// Structural wire-size model: fixed byte costs per primitive, applied to
/// message contents. Sizes never depend on in-memory layout or on the
/// run's randomness.
pub const TX_WIRE_BYTES: u64 = 2890;
pub const SIG_WIRE_BYTES: u64 = 64;
pub const DIGEST_WIRE_BYTES: u64 = 32;
pub const MSG_HEADER_BYTES: u64 = 40;
pub const KEY_WIRE_BYTES: u64 = 24;

pub fn cert_wire_bytes(cert: &Certificate) -> u64 {
    DIGEST_WIRE_BYTES + 1 + cert.signers.len() as u64 * (4 + SIG_WIRE_BYTES)
}

pub fn block_wire_bytes(block: &LocalBlock) -> u64 {
    // zone + number + prev + proposer + sync points + entries.
    2 + 8 + DIGEST_WIRE_BYTES + 4
        + block.sync_points.len() as u64 * 12
        + block.entries.len() as u64 * TX_WIRE_BYTES
}

pub fn vertex_wire_bytes(vertex: &Vertex) -> u64 {
    // creator + zone + round + digest list + parent certificates.
    4 + 2 + 8
        + vertex.digests.len() as u64 * (8 + DIGEST_WIRE_BYTES)
        + vertex.parents.iter().map(cert_wire_bytes).sum::<u64>()
}

pub fn payload_wire_bytes(payload: &ProcPayload) -> u64 {
    payload.ents.len() as u64 * (8 + KEY_WIRE_BYTES + 8)
        + payload.aborted_global.len() as u64 * 8
        + payload.own_numbers.len() as u64 * 8
}

pub fn proof_wire_bytes(proof: &Proof) -> u64 {
    8 + 3 * DIGEST_WIRE_BYTES + 4
        + proof.hdrs.values().map(|v| 2 + 8 * v.len() as u64).sum::<u64>()
        + proof.zone_digests.len() as u64 * (2 + DIGEST_WIRE_BYTES)
        + DIGEST_WIRE_BYTES
}

fn record_wire_bytes(record: &DecisionRecord) -> u64 {
    8 + 2 + record.writes.len() as u64 * (KEY_WIRE_BYTES + 8) + SIG_WIRE_BYTES
}

/// Everything that crosses the simulated network.
#[derive(Debug, Clone)]
pub enum Message {
    /// Client submission to its zone's full member.
    Submit { tx: Transaction },
    /// Final outcome notification back to the submitting client.
    OutcomeEvent { txid: TxId, outcome: Outcome },
    /// Local-chain proposal from the full member to its locals.
    Proposal { block: Shared<LocalBlock> },
    /// A local's endorsement of a proposal digest.
    Endorse { number: u64, digest: Digest, token: SigToken },
    /// Completed local-commit certificate, fanned back to the locals.
    LocalCommit { number: u64, cert: Certificate },
    /// Committed local block replicated to another committee member.
    Replicate { block: Shared<LocalBlock>, cert_local: Certificate },
    /// Availability acknowledgment back to the block's owner.
    Ack { zone: ZoneId, number: u64, token: SigToken },
    /// Availability certificate, fanned to the owner's locals (audit clock).
    AvailNotice { number: u64, cert: Certificate },
    /// A local's request to re-send a missing availability certificate.
    AvailQuery { number: u64 },
    /// DAG vertex proposal to the committee.
    VertexMsg { vertex: Shared<Vertex> },
    /// Inclusion vote returned to a vertex's creator.
    Vote { subject: Digest, token: SigToken },
    /// Completed inclusion certificate, fanned to the committee.
    CertMsg { cert: Certificate },
    FetchBlocks { wants: Vec<(ZoneId, u64)> },
    BlocksReply { blocks: Vec<(Shared<LocalBlock>, Certificate)> },
    FetchVertices { wants: Vec<Digest> },
    VerticesReply { vertices: Vec<Shared<Vertex>> },
    /// Signed processing-proof share exchanged among committee members.
    ProofShare { proof: Shared<Proof>, token: SigToken },
    /// Certified processing result for one zone, sent to its locals.
    Proc { k: u64, payload: ProcPayload, proof: Shared<Proof>, cert: Certificate },
    /// A local's request to re-send the processing result covering a block.
    ProcQuery { number: u64 },
    /// Full-replication scheme: foreign block forwarded into the zone.
    ForwardBlock { block: Shared<LocalBlock>, cert_local: Certificate },
    /// A local's signed fault conclusion, sent to the zone standby.
    FaultClaimMsg { claim: FaultClaim },
    /// Quorum-certified view change announced to the zone.
    NewViewMsg { nv: NewView },
    /// Recovery: state-digest history handshake.
    DigestQuery,
    DigestReply { history: Vec<(u64, Digest)> },
    /// Recovery: bulk snapshot download, verified by a processing proof.
    SnapshotRequest { k: u64 },
    /// `zone_procs` carries the requester zone's certified sync payloads so
    /// the new member can re-serve processing results its predecessor may
    /// have withheld from the zone.
    SnapshotReply {
        package: Shared<RecoveryPackage>,
        proof: Shared<Proof>,
        cert: Certificate,
        zone_procs: Vec<(u64, ProcPayload, Shared<Proof>, Certificate)>,
    },
    /// Recovery / catch-up: a zone's local chain above a height.
    ChainRequest { from_height: u64 },
    ChainReply {
        blocks: Vec<(Shared<LocalBlock>, Certificate)>,
        procs: Vec<(u64, ProcPayload)>,
    },
    /// Coordinated-commit scheme (2PC) traffic.
    TwoPcForward { tx: Transaction },
    TwoPcPrepare { txid: TxId, keys: Vec<Key> },
    TwoPcVote { txid: TxId, zone: ZoneId, values: Option<Vec<(Key, i64)>> },
    TwoPcDecide { record: DecisionRecord },
    TwoPcAbort { txid: TxId },
}

impl Wire for Message {
    fn class(&self) -> &'static str {
        match self {
            Message::Submit { .. } => "submit",
            Message::OutcomeEvent { .. } => "outcome",
            Message::Proposal { .. } => "l-blk",
            Message::Endorse { .. } => "endorse",
            Message::LocalCommit { .. } => "l-commit",
            Message::Replicate { .. } => "repl",
            Message::Ack { .. } => "ack",
            Message::AvailNotice { .. } => "avail",
            Message::AvailQuery { .. } => "avail-q",
            Message::VertexMsg { .. } => "vertex",
            Message::Vote { .. } => "vote",
            Message::CertMsg { .. } => "cert",
            Message::FetchBlocks { .. } => "fetch-blk",
            Message::BlocksReply { .. } => "blk",
            Message::FetchVertices { .. } => "fetch-vtx",
            Message::VerticesReply { .. } => "vtx",
            Message::ProofShare { .. } => "proof",
            Message::Proc { .. } => "proc",
            Message::ProcQuery { .. } => "proc-q",
            Message::ForwardBlock { .. } => "fwd",
            Message::FaultClaimMsg { .. } => "claim",
            Message::NewViewMsg { .. } => "new-view",
            Message::DigestQuery => "dig-query",
            Message::DigestReply { .. } => "dig-reply",
            Message::SnapshotRequest { .. } => "snap-req",
            Message::SnapshotReply { .. } => "snap",
            Message::ChainRequest { .. } => "chain-req",
            Message::ChainReply { .. } => "chain",
            Message::TwoPcForward { .. } => "2pc-fwd",
            Message::TwoPcPrepare { .. } => "2pc-prep",
            Message::TwoPcVote { .. } => "2pc-vote",
            Message::TwoPcDecide { .. } => "2pc-decide",
            Message::TwoPcAbort { .. } => "2pc-abort",
        }
    }

    fn size_bytes(&self) -> u64 {
        let body = match self {
            Message::Submit { .. } | Message::TwoPcForward { .. } => TX_WIRE_BYTES,
            Message::OutcomeEvent { .. } => 8 + 1,
            Message::Proposal { block } => block_wire_bytes(block),
            Message::Endorse { .. } => 8 + DIGEST_WIRE_BYTES + SIG_WIRE_BYTES,
            Message::LocalCommit { cert, .. } => 8 + cert_wire_bytes(cert),
            Message::Replicate { block, cert_local }
            | Message::ForwardBlock { block, cert_local } => {
                block_wire_bytes(block) + cert_wire_bytes(cert_local)
            }
            Message::Ack { .. } => 2 + 8 + SIG_WIRE_BYTES,
            Message::AvailNotice { cert, .. } => 8 + cert_wire_bytes(cert),
            Message::AvailQuery { .. } | Message::ProcQuery { .. } => 8,
            Message::VertexMsg { vertex } => vertex_wire_bytes(vertex),
            Message::Vote { .. } => DIGEST_WIRE_BYTES + SIG_WIRE_BYTES,
            Message::CertMsg { cert } => cert_wire_bytes(cert),
            Message::FetchBlocks { wants } => 10 * wants.len() as u64,
            Message::BlocksReply { blocks } => blocks
                .iter()
                .map(|(b, c)| block_wire_bytes(b) + cert_wire_bytes(c))
                .sum(),
            Message::FetchVertices { wants } => DIGEST_WIRE_BYTES * wants.len() as u64,
            Message::VerticesReply { vertices } => {
                vertices.iter().map(|v| vertex_wire_bytes(v)).sum()
            }
            Message::ProofShare { proof, .. } => proof_wire_bytes(proof) + SIG_WIRE_BYTES,
            Message::Proc { payload, proof, cert, .. } => {
                8 + payload_wire_bytes(payload) + proof_wire_bytes(proof) + cert_wire_bytes(cert)
            }
            Message::FaultClaimMsg { .. } => 2 + 4 + 4 + 4 + SIG_WIRE_BYTES,
            Message::NewViewMsg { nv } => 2 + 4 + 4 + 4 + cert_wire_bytes(&nv.cert),
            Message::DigestQuery => 0,
            Message::DigestReply { history } => {
                history.len() as u64 * (8 + DIGEST_WIRE_BYTES)
            }
            Message::SnapshotRequest { .. } => 8,
            Message::SnapshotReply { package, proof, cert, zone_procs } => {
                8 + DIGEST_WIRE_BYTES
                    + package.state.len() as u64
                    + package
                        .mempool
                        .blocks
                        .iter()
                        .map(|(_, s)| block_wire_bytes(&s.block) + cert_wire_bytes(&s.cert_local))
                        .sum::<u64>()
                    + package.dag.vertices.iter().map(|v| vertex_wire_bytes(v)).sum::<u64>()
                    + package.dag.certs.iter().map(cert_wire_bytes).sum::<u64>()
                    + proof_wire_bytes(proof)
                    + cert_wire_bytes(cert)
                    + zone_procs
                        .iter()
                        .map(|(_, p, pr, c)| {
                            8 + payload_wire_bytes(p) + proof_wire_bytes(pr) + cert_wire_bytes(c)
                        })
                        .sum::<u64>()
            }
            Message::ChainRequest { .. } => 8,
            Message::ChainReply { blocks, procs } => {
                blocks
                    .iter()
                    .map(|(b, c)| block_wire_bytes(b) + cert_wire_bytes(c))
                    .sum::<u64>()
                    + procs.iter().map(|(_, p)| 8 + payload_wire_bytes(p)).sum::<u64>()
            }
            Message::TwoPcPrepare { keys, .. } => 8 + KEY_WIRE_BYTES * keys.len() as u64,
            Message::TwoPcVote { values, .. } => {
                8 + 2 + values.as_ref().map_or(0, |v| v.len() as u64 * (KEY_WIRE_BYTES + 8))
            }
            Message::TwoPcDecide { record } => record_wire_bytes(record),
            Message::TwoPcAbort { .. } => 8,
        };
        MSG_HEADER_BYTES + body
    }
}

/// Timer payloads across all node kinds.
#[derive(Debug, Clone)]
pub enum TimerKind {
    /// Pre-planned client submission (seq is the client-stream index).
    ClientSubmit { seq: u32 },
    /// Periodic local-chain cut check on the full member.
    BatchTick,
    /// Periodic DAG round driver on the full member.
    VertexTick,
    /// Modeled end of main-block processing (busy time elapsed).
    ProcessingDone { k: u64 },
    /// First audit deadline for a local block (avail or proc phase).
    AuditCheck { number: u64, deadline: u64 },
    /// Post-GST grace deadline for the same block.
    AuditGst { number: u64, deadline: u64 },
    /// Coordinator vote-collection timeout for one 2PC transaction.
    TwoPcTimeout { txid: TxId },
    /// Recovery driver on a promoted standby (query rounds, retries).
    RecoveryKick,
}

/// Final per-node state collected by the end-of-run hooks, for safety checks
/// and the storage/state sections of the report.
#[derive(Debug, Default)]
pub struct FinalStates {
    /// Committee members: main-state digest after the last processed block.
    pub main_digest: BTreeMap<NodeId, Digest>,
    /// Committee members: full committed block sequence (k, zone, number).
    pub main_tau: BTreeMap<NodeId, Vec<(u64, ZoneId, u64)>>,
    /// One canonical main-state database: (member, processed k, state);
    /// the most-advanced member wins.
    pub main_db: Option<(NodeId, u64, StateDB)>,
    /// Committee members: recent per-k state digests.
    pub digest_history: BTreeMap<NodeId, Vec<(u64, Digest)>>,
    /// Locals: (zone, committed-state digest, chain height).
    pub zone_digest: BTreeMap<NodeId, (ZoneId, Digest, u64)>,
    /// One canonical committed zone database per zone: (local, chain height,
    /// state); the most-advanced local wins.
    pub zone_db: BTreeMap<ZoneId, (NodeId, u64, StateDB)>,
    /// Locals: committed chain as (number, block digest) pairs.
    pub local_chain: BTreeMap<NodeId, Vec<(u64, Digest)>>,
    /// Distinct certified processing-proof cores seen per main block.
    pub proc_roots: BTreeMap<u64, BTreeSet<Digest>>,
    /// Modeled bytes stored per node at run end.
    pub storage: BTreeMap<NodeId, u64>,
    /// Equivocation evidence count per observing committee member.
    pub equivocations: BTreeMap<NodeId, u64>,
}

/// Shared simulation state: directory, measurement plane, and run log.
pub struct World {
    pub topo: Topology,
    pub params: ProtocolParams,
    pub scheme: Scheme,
    pub crypto: CryptoRegistry,
    /// Current full member seat per zone.
    pub membership: BTreeMap<ZoneId, NodeId>,
    /// Everyone ever seated on the committee (certificate verification set).
    pub committee: Vec<NodeId>,
    /// View counter per zone (0 = initial member).
    pub views: BTreeMap<ZoneId, u32>,
    pub ledger: OutcomeLedger,
    /// Interference classification for aborted local transactions, recorded
    /// by committee members at processing time and joined by clients.
    pub interference: BTreeMap<TxId, InterferenceKind>,
    /// Latest planned client submission time.
    pub submit_end_us: u64,
    pub zone_genesis: BTreeMap<ZoneId, StateDB>,
    pub main_genesis: StateDB,
    pub view_changes: u64,
    /// Audit fault conclusions reached (one per concluding local).
    pub audit_faults: u64,
    pub depositions: Vec<(ZoneId, NodeId, u64)>,
    pub deposed: BTreeSet<NodeId>,
    /// Fatal model-integrity violations; tests require this to stay empty.
    pub integrity: Vec<String>,
    pub audit_log: Vec<AuditEvent>,
    /// Proof shares that did not match the local computation, per receiver.
    pub proof_mismatches: u64,
    pub finals: FinalStates,
}

impl World {
    pub fn new(
        topo: Topology,
        params: ProtocolParams,
        scheme: Scheme,
        wl: &WorkloadConfig,
    ) -> World {
        let zones: Vec<ZoneId> = topo.zones.iter().map(|z| z.zone).collect();
        let main_genesis = StateDB::genesis(&zones, wl.accounts_per_zone, wl.init_balance);
        let zone_genesis = zones
            .iter()
            .map(|&z| (z, StateDB::genesis(&[z], wl.accounts_per_zone, wl.init_balance)))
            .collect();
        let membership: BTreeMap<ZoneId, NodeId> =
            topo.zones.iter().map(|z| (z.zone, z.full)).collect();
        let committee: Vec<NodeId> = membership.values().copied().collect();
        let views = zones.iter().map(|&z| (z, 0)).collect();
        World {
            topo,
            params,
            scheme,
            crypto: CryptoRegistry::new(),
            membership,
            committee,
            views,
            ledger: OutcomeLedger::default(),
            interference: BTreeMap::new(),
            submit_end_us: 0,
            zone_genesis,
            main_genesis,
            view_changes: 0,
            audit_faults: 0,
            depositions: Vec::new(),
            deposed: BTreeSet::new(),
            integrity: Vec::new(),
            audit_log: Vec::new(),
            proof_mismatches: 0,
            finals: FinalStates::default(),
        }
    }

    /// Current committee seating, in zone order.
    pub fn fulls(&self) -> Vec<NodeId> {
        self.membership.values().copied().collect()
    }

    pub fn member_of(&self, zone: ZoneId) -> NodeId {
        self.membership[&zone]
    }

    /// The client node a transaction id maps back to.
    pub fn client_node(&self, txid: TxId) -> NodeId {
        self.topo.zone(ZoneId(txid.zone)).clients[txid.client as usize]
    }

    pub fn zone_locals(&self, zone: ZoneId) -> Vec<NodeId> {
        self.topo.zone(zone).locals.clone()
    }

    /// Seats a new member for `zone` and logs the deposition.
    pub fn seat(&mut self, zone: ZoneId, new_member: NodeId, at: u64) {
        let old = self.membership.insert(zone, new_member).expect("zone seated");
        if !self.committee.contains(&new_member) {
            self.committee.push(new_member);
            self.committee.sort();
        }
        *self.views.entry(zone).or_insert(0) += 1;
        self.view_changes += 1;
        self.deposed.insert(old);
        self.depositions.push((zone, old, at));
    }
}

/// Assembles a ready-to-run simulation: world, every node (with Byzantine
/// adapters applied per the fault plan), pre-planned client submission
/// timers, and the initial batch/vertex drivers.
pub fn build(
    topo: Topology,
    params: ProtocolParams,
    scheme: Scheme,
    wl: &WorkloadConfig,
    seed: u64,
    delay: DelayModel,
    faults: Vec<FaultSpec>,
) -> Simulation<Message, TimerKind, World> {
    let zones: Vec<ZoneId> = topo.zones.iter().map(|z| z.zone).collect();
    let clients: Vec<(ZoneId, u16)> = topo
        .zones
        .iter()
        .flat_map(|zm| (0..zm.clients.len() as u16).map(move |c| (zm.zone, c)))
        .collect();
    let plan = plan_submissions(wl, &clients);
    let mut world = World::new(topo.clone(), params.clone(), scheme, wl);
    world.submit_end_us = plan.values().flatten().copied().max().unwrap_or(0);

    let mut sim = Simulation::new(&topo, seed, delay, world);

    for zm in &topo.zones {
        let fm = CommitteeNode::full_member(zm.zone, zm.full, &sim.world);
        sim.add_node(zm.full, wrap_adapters(fm, zm.full, &faults));
        for &l in &zm.locals {
            sim.add_node(l, Box::new(LocalNode::new(zm.zone, l, &sim.world)));
        }
        if let Some(s) = zm.standby {
            let node = CommitteeNode::standby(zm.zone, s, &sim.world);
            sim.add_node(s, wrap_adapters(node, s, &faults));
        }
        for (idx, &c) in zm.clients.iter().enumerate() {
            let gen = TxGen::new(wl, &zones, zm.zone, idx as u16);
            sim.add_node(c, Box::new(ClientNode::new(zm.zone, gen)));
            if let Some(times) = plan.get(&(zm.zone, idx as u16)) {
                for (seq, &t) in times.iter().enumerate() {
                    sim.schedule_timer(t, c, TimerKind::ClientSubmit { seq: seq as u32 });
                }
            }
        }
        sim.schedule_timer(params.batch_timeout_us, zm.full, TimerKind::BatchTick);
        if scheme != Scheme::Performance {
            sim.schedule_timer(0, zm.full, TimerKind::VertexTick);
        }
    }
    for f in faults {
        sim.inject_fault(f);
    }
    sim
}

/// Wraps a committee node in a Byzantine adapter when the fault plan names
/// it as an equivocator or tamperer.
fn wrap_adapters(
    node: CommitteeNode,
    id: NodeId,
    faults: &[FaultSpec],
) -> Box<dyn crate::simnet::Actor<Message, TimerKind, World>> {
    let mut equivocate = false;
    let mut tamper: Option<String> = None;
    for f in faults.iter().filter(|f| f.target == id) {
        match &f.kind {
            FaultKind::Equivocate => equivocate = true,
            FaultKind::Tamper { field } => tamper = Some(field.clone()),
            _ => {}
        }
    }
    if equivocate || tamper.is_some() {
        Box::new(ByzAdapter::new(node, equivocate, tamper))
    } else {
        Box::new(node)
    }
}
