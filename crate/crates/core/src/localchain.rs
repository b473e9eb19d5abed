//! Per-zone chain: the full member speculatively executes local transactions
//! as they arrive, cuts blocks (size-or-timeout), and drives a collapsed
//! PBFT round (propose → endorse → commit certificate) over the zone's local
//! members, which re-execute every transaction and endorse only bit-identical
//! read/write sets.
//!
//! Main-chain sync entries are serialized into chain order through per-block
//! *sync points*: the proposer applies verified `ents_z(k)` between
//! transaction executions and records `(txOffset, k)` in the block; a
//! validator replays executions honoring those markers against its own copy
//! of the certified entries, so proposer and validators always execute every
//! transaction in an identical state context.
//!
//! Speculative writes live in per-block overlay layers and merge into the
//! committed store only when the commit certificate arrives; an abandoned
//! proposal (deposed proposer) is dropped by discarding its layer.

use std::collections::{BTreeMap, BTreeSet};

use crate::alt::DecisionRecord;
use crate::codec::Encode;
use crate::crypto::{CryptoRegistry, Digest, SigToken};
use crate::statedb::{execute_op, ReadWriteSet, StateDB, StateView, SyncEntry};
use crate::types::{
    owner_zone, Certificate, CertKind, Key, NodeId, Shared, Transaction, TxId, TxType, Version,
    ZoneId,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockEntry {
    Local { tx: Transaction, rwset: ReadWriteSet },
    Global { tx: Transaction },
    /// Performance scheme only: coordinator-decided 2PC writes applied
    /// through local consensus.
    TwoPcApply { record: DecisionRecord },
}

impl BlockEntry {
    pub fn txid(&self) -> TxId {
        match self {
            BlockEntry::Local { tx, .. } | BlockEntry::Global { tx } => tx.id,
            BlockEntry::TwoPcApply { record } => record.txid,
        }
    }
}

impl Encode for BlockEntry {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            BlockEntry::Local { tx, rwset } => {
                out.push(0);
                tx.encode(out);
                rwset.encode(out);
            }
            BlockEntry::Global { tx } => {
                out.push(1);
                tx.encode(out);
            }
            BlockEntry::TwoPcApply { record } => {
                out.push(2);
                record.encode(out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalBlock {
    pub zone: ZoneId,
    pub number: u64,
    pub prev: Digest,
    pub proposer: NodeId,
    /// (txOffset, mainBlock k): ents_z(k) applied immediately before
    /// executing the entry at txOffset (offset = len means after the last).
    pub sync_points: Vec<(u32, u64)>,
    pub entries: Vec<BlockEntry>,
}

impl Encode for LocalBlock {
    fn encode(&self, out: &mut Vec<u8>) {
        self.zone.encode(out);
        self.number.encode(out);
        self.prev.encode(out);
        self.proposer.encode(out);
        self.sync_points.encode(out);
        self.entries.encode(out);
    }
}

impl LocalBlock {
    pub fn digest(&self) -> Digest {
        Digest::of(self)
    }

    pub fn header(&self) -> crate::types::BlockHeader {
        crate::types::BlockHeader { zone: self.zone, number: self.number, digest: self.digest() }
    }
}

/// Digest certified by a LocalCommitCert / acknowledged for availability:
/// binds zone, number and content.
pub fn header_digest(zone: ZoneId, number: u64, block_digest: &Digest) -> Digest {
    let mut buf = Vec::new();
    "blk-hdr".encode(&mut buf);
    zone.encode(&mut buf);
    number.encode(&mut buf);
    block_digest.encode(&mut buf);
    Digest::of_bytes(&buf)
}

pub fn genesis_digest(zone: ZoneId) -> Digest {
    Digest::of(&("local-genesis", zone.0))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    WrongProposer,
    NumberGap { expected: u64, got: u64 },
    PrevHashMismatch,
    BadClassification { txid: TxId },
    RwsetMismatch { txid: TxId },
    DuplicateTx { txid: TxId },
    BadSyncPoint { k: u64 },
    BadDecisionRecord { txid: TxId },
    ExecFailure { txid: TxId },
}

#[derive(Debug)]
pub enum ValidationOutcome {
    /// Sign this digest and return it to the proposer.
    Endorse(Digest),
    /// Proposal references a main block k whose PROC has not arrived yet.
    Defer { missing_k: u64 },
    Reject(RejectReason),
    /// Already-processed proposal (duplicate delivery).
    Stale,
}

type Layer = BTreeMap<Key, (i64, Version)>;

struct LayeredView<'a> {
    layers: Vec<&'a Layer>,
    base: &'a StateDB,
}

impl StateView for LayeredView<'_> {
    fn get(&self, key: &str) -> Option<(i64, Version)> {
        for layer in &self.layers {
            if let Some(v) = layer.get(key) {
                return Some(*v);
            }
        }
        self.base.get(key)
    }
}

#[derive(Debug)]
enum Item {
    Entry(BlockEntry),
    Sync(u64),
}

#[derive(Debug, Default)]
struct Window {
    items: Vec<Item>,
    layer: Layer,
    tx_count: u32,
}

struct Outstanding {
    block: Shared<LocalBlock>,
    digest: Digest,
    layer: Layer,
    endorsements: BTreeMap<NodeId, SigToken>,
}

pub struct CommittedBlock {
    pub block: Shared<LocalBlock>,
    pub cert: Certificate,
}

/// Full-member side of the zone chain.
pub struct Proposer {
    pub zone: ZoneId,
    pub me: NodeId,
    pub committed: StateDB,
    pub height: u64,
    tip: Digest,
    pending: Window,
    outstanding: Option<Outstanding>,
    procs: BTreeMap<u64, Vec<SyncEntry>>,
    applied_ks: BTreeSet<u64>,
    batch_size: u32,
}

impl Proposer {
    pub fn new(zone: ZoneId, me: NodeId, committed: StateDB, batch_size: u32) -> Proposer {
        Proposer {
            zone,
            me,
            committed,
            height: 0,
            tip: genesis_digest(zone),
            pending: Window::default(),
            outstanding: None,
            procs: BTreeMap::new(),
            applied_ks: BTreeSet::new(),
            batch_size,
        }
    }

    fn next_stamp(&self) -> (u64, u32) {
        let block = self.height + if self.outstanding.is_some() { 1 } else { 0 } + 1;
        (block, self.pending.tx_count)
    }

    fn view(&self) -> LayeredView<'_> {
        let mut layers = vec![&self.pending.layer];
        if let Some(o) = &self.outstanding {
            layers.push(&o.layer);
        }
        LayeredView { layers, base: &self.committed }
    }

    /// Read view over committed state plus all speculative layers (the 2PC
    /// participant votes against this so lock values match speculation).
    pub fn read_view(&self) -> impl StateView + '_ {
        self.view()
    }

    /// Speculatively executes (local txs) and enqueues a classified client
    /// transaction. Unknown accounts and malformed keys error out (the
    /// caller rejects the submission).
    pub fn admit(&mut self, tx: Transaction) -> crate::Result<TxType> {
        let class = tx.classify()?;
        match class {
            TxType::Local => {
                let rwset = execute_op(&self.view(), &tx.op)?;
                let (block, offset) = self.next_stamp();
                let version = Version::local(self.zone, block, offset);
                for (key, value) in &rwset.writes {
                    self.pending.layer.insert(key.clone(), (*value, version));
                }
                self.pending.items.push(Item::Entry(BlockEntry::Local { tx, rwset }));
            }
            TxType::Global => {
                self.pending.items.push(Item::Entry(BlockEntry::Global { tx }));
            }
        }
        self.pending.tx_count += 1;
        Ok(class)
    }

    /// Performance scheme: enqueue a decided 2PC record; its writes become
    /// visible to subsequent speculation immediately.
    pub fn admit_decision(&mut self, record: DecisionRecord) {
        let (block, offset) = self.next_stamp();
        let version = Version::local(self.zone, block, offset);
        for (key, value) in &record.writes {
            self.pending.layer.insert(key.clone(), (*value, version));
        }
        self.pending.items.push(Item::Entry(BlockEntry::TwoPcApply { record }));
        self.pending.tx_count += 1;
    }

    /// Records verified main-chain entries for k and applies them to the
    /// speculative state at the current chain position (a sync point of the
    /// next block). Must be called in strictly increasing k order.
    pub fn apply_proc(&mut self, k: u64, ents: Vec<SyncEntry>) {
        debug_assert!(self.procs.keys().all(|&prev| prev < k));
        for (idx, ent) in ents.iter().enumerate() {
            self.pending.layer.insert(ent.key.clone(), (ent.value, Version::main(k, idx as u32)));
        }
        self.procs.insert(k, ents);
        self.pending.items.push(Item::Sync(k));
    }

    pub fn batch_full(&self) -> bool {
        self.pending.tx_count >= self.batch_size
    }

    pub fn has_pending_txs(&self) -> bool {
        self.pending.tx_count > 0
    }

    pub fn has_outstanding(&self) -> bool {
        self.outstanding.is_some()
    }

    /// Cuts the next block from the pending window (up to batch_size txs).
    /// No-op while a proposal is outstanding or the window has no txs.
    pub fn cut(&mut self) -> Option<Shared<LocalBlock>> {
        if self.outstanding.is_some() || self.pending.tx_count == 0 {
            return None;
        }
        let window = std::mem::take(&mut self.pending);
        let mut entries = Vec::new();
        let mut sync_points = Vec::new();
        let mut remainder = Vec::new();
        let mut iter = window.items.into_iter();
        for item in iter.by_ref() {
            match item {
                Item::Sync(k) => sync_points.push((entries.len() as u32, k)),
                Item::Entry(e) => {
                    entries.push(e);
                    if entries.len() as u32 == self.batch_size {
                        break;
                    }
                }
            }
        }
        remainder.extend(iter);
        let block = Shared::new(LocalBlock {
            zone: self.zone,
            number: self.height + 1,
            prev: self.tip,
            proposer: self.me,
            sync_points,
            entries,
        });
        let digest = block.digest();
        // The cut block's effect stays visible through its own overlay layer
        // until the commit certificate merges it.
        let layer = self.replay_layer(&block);
        self.outstanding =
            Some(Outstanding { block: block.clone(), digest, layer, endorsements: BTreeMap::new() });
        // Rebuild the pending window from the remainder, re-executing local
        // txs so their version stamps move to the next block.
        self.rebuild_window(remainder);
        Some(block)
    }

    /// Recomputes a block's final write layer in chronological order
    /// (sync points interleaved with tx writes).
    fn replay_layer(&self, block: &LocalBlock) -> Layer {
        let mut layer = Layer::new();
        let mut points = block.sync_points.iter().peekable();
        for (offset, entry) in block.entries.iter().enumerate() {
            while let Some(&&(o, k)) = points.peek() {
                if o as usize == offset {
                    self.apply_sync_to_layer(&mut layer, k);
                    points.next();
                } else {
                    break;
                }
            }
            let version = Version::local(self.zone, block.number, offset as u32);
            match entry {
                BlockEntry::Local { rwset, .. } => {
                    for (key, value) in &rwset.writes {
                        layer.insert(key.clone(), (*value, version));
                    }
                }
                BlockEntry::TwoPcApply { record } => {
                    for (key, value) in &record.writes {
                        layer.insert(key.clone(), (*value, version));
                    }
                }
                BlockEntry::Global { .. } => {}
            }
        }
        for &&(_, k) in points.collect::<Vec<_>>().iter() {
            self.apply_sync_to_layer(&mut layer, k);
        }
        layer
    }

    fn apply_sync_to_layer(&self, layer: &mut Layer, k: u64) {
        if let Some(ents) = self.procs.get(&k) {
            for (idx, ent) in ents.iter().enumerate() {
                layer.insert(ent.key.clone(), (ent.value, Version::main(k, idx as u32)));
            }
        }
    }

    fn rebuild_window(&mut self, remainder: Vec<Item>) {
        self.pending = Window::default();
        for item in remainder {
            match item {
                Item::Sync(k) => {
                    let ents = self.procs.get(&k).cloned().unwrap_or_default();
                    for (idx, ent) in ents.iter().enumerate() {
                        self.pending
                            .layer
                            .insert(ent.key.clone(), (ent.value, Version::main(k, idx as u32)));
                    }
                    self.pending.items.push(Item::Sync(k));
                }
                Item::Entry(BlockEntry::Local { tx, .. }) => {
                    // Same state, new stamp; cannot fail because it executed
                    // once already.
                    self.admit(tx).expect("re-admission of executed tx");
                }
                Item::Entry(BlockEntry::Global { tx }) => {
                    self.pending.items.push(Item::Entry(BlockEntry::Global { tx }));
                    self.pending.tx_count += 1;
                }
                Item::Entry(BlockEntry::TwoPcApply { record }) => {
                    self.admit_decision(record);
                }
            }
        }
    }

    /// Collects an endorsement. Returns the committed block + certificate
    /// when the local quorum over the outstanding digest completes.
    pub fn add_endorsement(
        &mut self,
        from: NodeId,
        digest: Digest,
        token: SigToken,
        crypto: &CryptoRegistry,
        locals: &[NodeId],
        quorum: usize,
    ) -> Option<CommittedBlock> {
        let outstanding = self.outstanding.as_mut()?;
        if digest != outstanding.digest || !locals.contains(&from) {
            return None;
        }
        let signed = Certificate::signing_digest(CertKind::LocalCommit, &digest);
        if !crypto.verify(from, &signed, &token) {
            return None;
        }
        outstanding.endorsements.insert(from, token);
        if outstanding.endorsements.len() < quorum {
            return None;
        }
        let o = self.outstanding.take().unwrap();
        let cert = Certificate::new(
            CertKind::LocalCommit,
            o.digest,
            o.endorsements.into_iter().collect(),
        );
        for (key, (value, version)) in o.layer {
            self.committed.put(key, value, version);
        }
        for &(_, k) in &o.block.sync_points {
            self.applied_ks.insert(k);
        }
        self.height += 1;
        self.tip = o.digest;
        Some(CommittedBlock { block: o.block, cert })
    }

    /// Applies main-chain entries that never made it into a committed block
    /// (run-end flush, in k order).
    pub fn flush_unapplied_syncs(&mut self) {
        for (&k, ents) in &self.procs {
            if self.applied_ks.contains(&k) {
                continue;
            }
            for (idx, ent) in ents.iter().enumerate() {
                self.committed.put(ent.key.clone(), ent.value, Version::main(k, idx as u32));
            }
        }
    }

    pub fn tip(&self) -> Digest {
        self.tip
    }

    pub fn committed_state(&self) -> &StateDB {
        &self.committed
    }

    /// State installed from a recovered chain (new full member takeover).
    pub fn install_chain_state(&mut self, height: u64, tip: Digest, committed: StateDB,
        procs: BTreeMap<u64, Vec<SyncEntry>>, applied_ks: BTreeSet<u64>) {
        self.height = height;
        self.tip = tip;
        self.committed = committed;
        self.procs = procs;
        self.applied_ks = applied_ks;
        self.pending = Window::default();
        self.outstanding = None;
    }
}

/// Payload of a verified PROC, stored per main block k.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProcPayload {
    pub ents: Vec<SyncEntry>,
    pub aborted_global: Vec<TxId>,
    /// This zone's local block numbers contained in main block k.
    pub own_numbers: Vec<u64>,
}

impl Encode for ProcPayload {
    fn encode(&self, out: &mut Vec<u8>) {
        self.ents.encode(out);
        self.aborted_global.encode(out);
        self.own_numbers.encode(out);
    }
}

/// Local-member side of the zone chain.
pub struct Validator {
    pub zone: ZoneId,
    pub me: NodeId,
    pub committed: StateDB,
    pub height: u64,
    tip: Digest,
    outstanding: Option<(Shared<LocalBlock>, Digest, Layer)>,
    pub procs: BTreeMap<u64, ProcPayload>,
    applied_ks: BTreeSet<u64>,
    committed_txids: BTreeSet<TxId>,
    /// Blocks committed on this chain, kept for audit, recovery serving and
    /// outcome events.
    pub chain: Vec<(Shared<LocalBlock>, Certificate)>,
}

impl Validator {
    pub fn new(zone: ZoneId, me: NodeId, committed: StateDB) -> Validator {
        Validator {
            zone,
            me,
            committed,
            height: 0,
            tip: genesis_digest(zone),
            outstanding: None,
            procs: BTreeMap::new(),
            applied_ks: BTreeSet::new(),
            committed_txids: BTreeSet::new(),
            chain: Vec::new(),
        }
    }

    pub fn store_proc(&mut self, k: u64, payload: ProcPayload) {
        self.procs.entry(k).or_insert(payload);
    }

    /// Full re-execution of a proposal. On success the speculative layer is
    /// parked until the commit certificate arrives.
    pub fn validate(
        &mut self,
        block: &Shared<LocalBlock>,
        expected_proposer: NodeId,
        crypto: &CryptoRegistry,
        coordinator: NodeId,
    ) -> ValidationOutcome {
        if block.number <= self.height {
            return ValidationOutcome::Stale;
        }
        if block.proposer != expected_proposer {
            return ValidationOutcome::Reject(RejectReason::WrongProposer);
        }
        if block.number != self.height + 1 {
            return ValidationOutcome::Reject(RejectReason::NumberGap {
                expected: self.height + 1,
                got: block.number,
            });
        }
        if block.prev != self.tip {
            return ValidationOutcome::Reject(RejectReason::PrevHashMismatch);
        }
        // Sync points: offsets in range and nondecreasing, ks strictly
        // increasing and beyond anything already applied, payloads on hand.
        let mut last_offset = 0u32;
        let mut last_k = self.applied_ks.iter().next_back().copied().unwrap_or(0);
        for &(offset, k) in &block.sync_points {
            if offset < last_offset || offset as usize > block.entries.len() || k <= last_k {
                return ValidationOutcome::Reject(RejectReason::BadSyncPoint { k });
            }
            if !self.procs.contains_key(&k) {
                return ValidationOutcome::Defer { missing_k: k };
            }
            last_offset = offset;
            last_k = k;
        }

        let mut layer = Layer::new();
        let mut block_txids = BTreeSet::new();
        let mut points = block.sync_points.iter().peekable();
        for (offset, entry) in block.entries.iter().enumerate() {
            while let Some(&&(o, k)) = points.peek() {
                if o as usize == offset {
                    self.apply_sync_to_layer(&mut layer, k);
                    points.next();
                } else {
                    break;
                }
            }
            let txid = entry.txid();
            if self.committed_txids.contains(&txid) || !block_txids.insert(txid) {
                return ValidationOutcome::Reject(RejectReason::DuplicateTx { txid });
            }
            let version = Version::local(self.zone, block.number, offset as u32);
            match entry {
                BlockEntry::Local { tx, rwset } => {
                    if tx.classify().ok() != Some(TxType::Local) {
                        return ValidationOutcome::Reject(RejectReason::BadClassification { txid });
                    }
                    let view = LayeredView { layers: vec![&layer], base: &self.committed };
                    let recomputed = match execute_op(&view, &tx.op) {
                        Ok(r) => r,
                        Err(_) => {
                            return ValidationOutcome::Reject(RejectReason::ExecFailure { txid })
                        }
                    };
                    if recomputed != *rwset {
                        return ValidationOutcome::Reject(RejectReason::RwsetMismatch { txid });
                    }
                    for (key, value) in &recomputed.writes {
                        layer.insert(key.clone(), (*value, version));
                    }
                }
                BlockEntry::Global { tx } => {
                    if tx.classify().ok() != Some(TxType::Global) {
                        return ValidationOutcome::Reject(RejectReason::BadClassification { txid });
                    }
                }
                BlockEntry::TwoPcApply { record } => {
                    if !record.verify(crypto, coordinator)
                        || record
                            .writes
                            .iter()
                            .any(|(key, _)| owner_zone(key).ok() != Some(self.zone))
                    {
                        return ValidationOutcome::Reject(RejectReason::BadDecisionRecord { txid });
                    }
                    for (key, value) in &record.writes {
                        layer.insert(key.clone(), (*value, version));
                    }
                }
            }
        }
        for &&(_, k) in points.collect::<Vec<_>>().iter() {
            self.apply_sync_to_layer(&mut layer, k);
        }
        let digest = block.digest();
        self.outstanding = Some((block.clone(), digest, layer));
        ValidationOutcome::Endorse(digest)
    }

    fn apply_sync_to_layer(&self, layer: &mut Layer, k: u64) {
        if let Some(p) = self.procs.get(&k) {
            for (idx, ent) in p.ents.iter().enumerate() {
                layer.insert(ent.key.clone(), (ent.value, Version::main(k, idx as u32)));
            }
        }
    }

    /// Commit-certificate arrival: merge the parked layer. Returns the
    /// committed block for event emission; None if the notice doesn't match.
    pub fn commit(
        &mut self,
        cert: &Certificate,
        crypto: &CryptoRegistry,
        locals: &[NodeId],
        quorum: usize,
    ) -> Option<Shared<LocalBlock>> {
        let (_, digest, _) = self.outstanding.as_ref()?;
        if !cert.verify(crypto, CertKind::LocalCommit, digest, locals, quorum) {
            return None;
        }
        let (block, digest, layer) = self.outstanding.take().unwrap();
        for (key, (value, version)) in layer {
            self.committed.put(key, value, version);
        }
        for &(_, k) in &block.sync_points {
            self.applied_ks.insert(k);
        }
        for entry in &block.entries {
            self.committed_txids.insert(entry.txid());
        }
        self.height += 1;
        self.tip = digest;
        self.chain.push((block.clone(), cert.clone()));
        Some(block)
    }

    /// Drops any parked proposal (view change: the proposer is being
    /// replaced, its in-flight block is abandoned).
    pub fn abandon_outstanding(&mut self) -> Option<Shared<LocalBlock>> {
        self.outstanding.take().map(|(b, _, _)| b)
    }

    pub fn flush_unapplied_syncs(&mut self) {
        let ks: Vec<u64> = self.procs.keys().copied().collect();
        for k in ks {
            if self.applied_ks.contains(&k) {
                continue;
            }
            let ents = self.procs[&k].ents.clone();
            for (idx, ent) in ents.iter().enumerate() {
                self.committed.put(ent.key.clone(), ent.value, Version::main(k, idx as u32));
            }
            self.applied_ks.insert(k);
        }
    }

    pub fn tip(&self) -> Digest {
        self.tip
    }

    pub fn applied_ks(&self) -> &BTreeSet<u64> {
        &self.applied_ks
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{account_key, BankOp, Topology};

    fn mk_tx(zone: u16, seq: u32, from_idx: u32, to_idx: u32, amount: i64) -> Transaction {
        Transaction {
            id: TxId { zone, client: 0, seq },
            submit_zone: ZoneId(zone),
            op: BankOp::Transfer {
                from: account_key(ZoneId(zone), from_idx),
                to: account_key(ZoneId(zone), to_idx),
                amount,
            },
        }
    }

    struct Zone {
        proposer: Proposer,
        validators: Vec<Validator>,
        crypto: CryptoRegistry,
        locals: Vec<NodeId>,
        fm: NodeId,
    }

    fn setup_zone() -> Zone {
        let topo = Topology::build(1, 1, 0, 0, false);
        let zone = ZoneId(0);
        let db = StateDB::genesis(&[zone], 8, 10_000);
        let fm = topo.zones[0].full;
        let locals = topo.zones[0].locals.clone();
        let proposer = Proposer::new(zone, fm, db.clone(), 3);
        let validators = locals.iter().map(|&l| Validator::new(zone, l, db.clone())).collect();
        Zone { proposer, validators, crypto: CryptoRegistry::new(), locals, fm }
    }

    /// Runs one full propose → endorse → commit round across the whole zone.
    fn commit_round(z: &mut Zone) -> Option<CommittedBlock> {
        let block = z.proposer.cut()?;
        let mut committed = None;
        let endorsements: Vec<(NodeId, Digest)> = z
            .validators
            .iter_mut()
            .map(|v| match v.validate(&block, z.fm, &z.crypto, NodeId(9999)) {
                ValidationOutcome::Endorse(d) => (v.me, d),
                other => panic!("expected endorsement, got {other:?}"),
            })
            .collect();
        for (who, digest) in endorsements {
            let signed = Certificate::signing_digest(CertKind::LocalCommit, &digest);
            let token = z.crypto.sign(who, &signed);
            if let Some(c) =
                z.proposer.add_endorsement(who, digest, token, &z.crypto, &z.locals, 3)
            {
                committed = Some(c);
            }
        }
        let c = committed.expect("quorum must commit");
        for v in &mut z.validators {
            v.commit(&c.cert, &z.crypto, &z.locals, 3).expect("validator commit");
        }
        Some(c)
    }

    #[test]
    fn happy_path_commit_keeps_members_identical() {
        let mut z = setup_zone();
        for seq in 0..3 {
            z.proposer.admit(mk_tx(0, seq, seq, seq + 1, 10)).unwrap();
        }
        let c = commit_round(&mut z).unwrap();
        assert_eq!(c.block.number, 1);
        assert_eq!(c.block.entries.len(), 3);
        assert_eq!(c.cert.signers.len(), 3);
        assert_eq!(z.proposer.height, 1);
        let reference = z.proposer.committed.snapshot_bytes();
        for v in &z.validators {
            assert_eq!(v.committed.snapshot_bytes(), reference);
            assert_eq!(v.height, 1);
        }
        // Funds moved: 0 -> 1 -> 2 -> 3 each 10.
        assert_eq!(z.proposer.committed.get(&account_key(ZoneId(0), 0)).unwrap().0, 9_990);
        assert_eq!(z.proposer.committed.get(&account_key(ZoneId(0), 3)).unwrap().0, 10_010);
    }

    #[test]
    fn oversized_queue_splits_at_batch_size_with_consistent_stamps() {
        let mut z = setup_zone();
        for seq in 0..5 {
            z.proposer.admit(mk_tx(0, seq, 0, 1, 1)).unwrap();
        }
        let b1 = commit_round(&mut z).unwrap().block;
        assert_eq!(b1.entries.len(), 3);
        assert_eq!(b1.number, 1);
        let b2 = commit_round(&mut z).unwrap().block;
        assert_eq!(b2.entries.len(), 2);
        assert_eq!(b2.number, 2);
        assert_eq!(b2.prev, b1.digest());
        // All five transfers applied exactly once.
        assert_eq!(z.proposer.committed.get(&account_key(ZoneId(0), 0)).unwrap().0, 9_995);
        assert_eq!(z.proposer.committed.get(&account_key(ZoneId(0), 1)).unwrap().0, 10_005);
    }

    #[test]
    fn singleton_block_on_timer_cut() {
        let mut z = setup_zone();
        z.proposer.admit(mk_tx(0, 0, 2, 3, 7)).unwrap();
        assert!(!z.proposer.batch_full());
        let c = commit_round(&mut z).unwrap();
        assert_eq!(c.block.entries.len(), 1);
    }

    #[test]
    fn tampered_write_value_is_rejected() {
        let mut z = setup_zone();
        z.proposer.admit(mk_tx(0, 0, 0, 1, 10)).unwrap();
        let block = z.proposer.cut().unwrap();
        let mut tampered = (*block).clone();
        if let BlockEntry::Local { rwset, .. } = &mut tampered.entries[0] {
            rwset.writes[0].1 += 1;
        }
        let tampered = Shared::new(tampered);
        match z.validators[0].validate(&tampered, z.fm, &z.crypto, NodeId(9999)) {
            ValidationOutcome::Reject(RejectReason::RwsetMismatch { .. }) => {}
            other => panic!("expected rwset mismatch, got {other:?}"),
        }
    }

    #[test]
    fn gap_and_prev_mismatch_rejected() {
        let mut z = setup_zone();
        z.proposer.admit(mk_tx(0, 0, 0, 1, 1)).unwrap();
        let block = z.proposer.cut().unwrap();
        let mut skipped = (*block).clone();
        skipped.number = 3;
        match z.validators[0].validate(&Shared::new(skipped), z.fm, &z.crypto, NodeId(9999)) {
            ValidationOutcome::Reject(RejectReason::NumberGap { expected: 1, got: 3 }) => {}
            other => panic!("{other:?}"),
        }
        let mut badprev = (*block).clone();
        badprev.prev = Digest::of_bytes(b"junk");
        match z.validators[1].validate(&Shared::new(badprev), z.fm, &z.crypto, NodeId(9999)) {
            ValidationOutcome::Reject(RejectReason::PrevHashMismatch) => {}
            other => panic!("{other:?}"),
        }
        let mut forged = (*block).clone();
        forged.proposer = NodeId(555);
        match z.validators[2].validate(&Shared::new(forged), z.fm, &z.crypto, NodeId(9999)) {
            ValidationOutcome::Reject(RejectReason::WrongProposer) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fork_resistance_exhaustive_endorsement_splits() {
        // fL=1, 4 locals, quorum 3. A Byzantine proposer offers two
        // conflicting blocks for number 1 and the Byzantine local endorses
        // both; however the 3 honest locals split, at most one digest can
        // reach quorum.
        let locals: Vec<NodeId> = (0..4).map(NodeId).collect();
        for split in 0u32..(1 << 3) {
            // honest local i endorses block A iff bit i set, else block B
            let a_honest = (0..3).filter(|i| split & (1 << i) != 0).count();
            let b_honest = 3 - a_honest;
            let a_total = a_honest + 1; // byzantine double-endorses
            let b_total = b_honest + 1;
            let a_cert = a_total >= 3;
            let b_cert = b_total >= 3;
            assert!(
                !(a_cert && b_cert),
                "split {split:03b}: both digests reached quorum"
            );
        }
        let _ = locals;
    }

    #[test]
    fn sync_points_replay_identically_and_defer_without_proc() {
        let mut z = setup_zone();
        let zone = ZoneId(0);
        z.proposer.admit(mk_tx(0, 0, 0, 1, 10)).unwrap();
        // Main block 1 rewrites account 2 between tx 0 and tx 1.
        let ents = vec![SyncEntry {
            txid: TxId { zone: 0, client: 9, seq: 9 },
            key: account_key(zone, 2),
            value: 777,
        }];
        z.proposer.apply_proc(1, ents.clone());
        // tx 1 deposits on account 2: must read the synced value 777.
        z.proposer
            .admit(Transaction {
                id: TxId { zone: 0, client: 0, seq: 1 },
                submit_zone: zone,
                op: BankOp::Deposit { to: account_key(zone, 2), amount: 5 },
            })
            .unwrap();
        let block = z.proposer.cut().unwrap();
        assert_eq!(block.sync_points, vec![(1, 1)]);

        // Validator without the PROC defers...
        match z.validators[0].validate(&block, z.fm, &z.crypto, NodeId(9999)) {
            ValidationOutcome::Defer { missing_k: 1 } => {}
            other => panic!("{other:?}"),
        }
        // ...and endorses after storing it.
        for v in &mut z.validators {
            v.store_proc(
                1,
                ProcPayload { ents: ents.clone(), aborted_global: vec![], own_numbers: vec![] },
            );
        }
        let c = {
            let mut committed = None;
            for i in 0..4 {
                let v = &mut z.validators[i];
                let d = match v.validate(&block, z.fm, &z.crypto, NodeId(9999)) {
                    ValidationOutcome::Endorse(d) => d,
                    other => panic!("{other:?}"),
                };
                let signed = Certificate::signing_digest(CertKind::LocalCommit, &d);
                let token = z.crypto.sign(z.locals[i], &signed);
                if let Some(c) =
                    z.proposer.add_endorsement(z.locals[i], d, token, &z.crypto, &z.locals, 3)
                {
                    committed = Some(c);
                }
            }
            committed.unwrap()
        };
        for v in &mut z.validators {
            v.commit(&c.cert, &z.crypto, &z.locals, 3);
        }
        // Deposit landed on top of the synced value.
        assert_eq!(z.proposer.committed.get(&account_key(zone, 2)).unwrap().0, 782);
        for v in &z.validators {
            assert_eq!(v.committed.snapshot_bytes(), z.proposer.committed.snapshot_bytes());
        }
    }

    #[test]
    fn unknown_account_rejected_at_admission() {
        let mut z = setup_zone();
        let bad = Transaction {
            id: TxId { zone: 0, client: 0, seq: 0 },
            submit_zone: ZoneId(0),
            op: BankOp::Refresh { key: account_key(ZoneId(0), 999) },
        };
        assert!(z.proposer.admit(bad).is_err());
        let malformed = Transaction {
            id: TxId { zone: 0, client: 0, seq: 1 },
            submit_zone: ZoneId(0),
            op: BankOp::Refresh { key: "nonsense".into() },
        };
        assert!(z.proposer.admit(malformed).is_err());
    }

    #[test]
    fn duplicate_txid_rejected_by_validators() {
        let mut z = setup_zone();
        z.proposer.admit(mk_tx(0, 0, 0, 1, 1)).unwrap();
        commit_round(&mut z).unwrap();
        // A forged second block replaying the committed tx.
        z.proposer.admit(mk_tx(0, 1, 0, 1, 1)).unwrap();
        let b2 = z.proposer.cut().unwrap();
        let mut forged = (*b2).clone();
        forged.entries[0] = BlockEntry::Local {
            tx: mk_tx(0, 0, 0, 1, 1),
            rwset: ReadWriteSet::default(),
        };
        match z.validators[0].validate(&Shared::new(forged), z.fm, &z.crypto, NodeId(9999)) {
            ValidationOutcome::Reject(RejectReason::DuplicateTx { .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flush_applies_leftover_sync_entries() {
        let mut z = setup_zone();
        let ents = vec![SyncEntry {
            txid: TxId { zone: 0, client: 9, seq: 1 },
            key: account_key(ZoneId(0), 4),
            value: 4_444,
        }];
        z.proposer.apply_proc(3, ents.clone());
        z.validators[0].store_proc(
            3,
            ProcPayload { ents, aborted_global: vec![], own_numbers: vec![] },
        );
        z.proposer.flush_unapplied_syncs();
        z.validators[0].flush_unapplied_syncs();
        assert_eq!(
            z.proposer.committed.get(&account_key(ZoneId(0), 4)),
            Some((4_444, Version::main(3, 0)))
        );
        assert_eq!(
            z.validators[0].committed.get(&account_key(ZoneId(0), 4)),
            Some((4_444, Version::main(3, 0)))
        );
    }
}
