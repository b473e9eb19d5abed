//! Main-chain block processing: turns each ordered batch into a main block
//! and runs the deferred half of the optimistic pipeline — local
//! transactions were already *executed* speculatively inside their zones, so
//! here they are only *validated* (version-exact re-check of their recorded
//! reads), while global transactions execute for the first time against the
//! replicated main state.
//!
//! With scheduling enabled, all local validations run before any global
//! execution, so a global write can never invalidate a local transaction
//! ordered in the same main block; with scheduling disabled the strict τ
//! order interleaves them and such same-block interference aborts become
//! possible. Every abort yields corrective sync entries (current main values
//! for the transaction's write keys), and every global write yields sync
//! entries for the owning zone; zones import these lists position-stamped,
//! which re-synchronizes their speculative state with the main chain.
//!
//! Each full member produces a processing proof π over the resulting state
//! transition; `fF+1` field-identical proofs form the processing
//! certificate relayed to the zones. Proofs disagreeing with the quorum are
//! excluded and flagged.

use std::collections::{BTreeMap, BTreeSet};

use crate::codec::Encode;
use crate::consensus::OrderedBatch;
use crate::crypto::Digest;
use crate::localchain::{header_digest, BlockEntry, LocalBlock, ProcPayload};
use crate::statedb::{execute_op, StateDB, StateView, SyncEntry};
use crate::types::{
    owner_zone, NodeId, ProtocolParams, Shared, Transaction, TxId, TxType, Version, ZoneId,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterferenceKind {
    /// A conflicting key was written by a global transaction in the same
    /// main block — the aborts the scheduler exists to eliminate.
    SameBlockGlobal,
    /// Stale speculation across main blocks (including abort cascades).
    CrossBlock,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxOutcome {
    pub txid: TxId,
    pub tx_type: TxType,
    pub committed: bool,
    pub interference: Option<InterferenceKind>,
}

/// Processing proof π produced by each full member for main block k.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proof {
    pub k: u64,
    pub main_block_hash: Digest,
    pub prev_hash: Digest,
    /// Local block numbers included, per zone.
    pub hdrs: BTreeMap<ZoneId, Vec<u64>>,
    pub creator: NodeId,
    /// Digest of each zone's sync payload for k.
    pub zone_digests: BTreeMap<ZoneId, Digest>,
    /// Digest over the ordered global-transaction outcomes.
    pub global_digest: Digest,
    /// Digest of the main state after applying k.
    pub state_digest: Digest,
}

impl Proof {
    /// Everything except the creator: certificates form over this, so
    /// `fF+1` members must agree on the full transition.
    pub fn core_digest(&self) -> Digest {
        let mut buf = Vec::new();
        "proc-proof".encode(&mut buf);
        self.k.encode(&mut buf);
        self.main_block_hash.encode(&mut buf);
        self.prev_hash.encode(&mut buf);
        self.hdrs.encode(&mut buf);
        self.zone_digests.encode(&mut buf);
        self.global_digest.encode(&mut buf);
        self.state_digest.encode(&mut buf);
        Digest::of_bytes(&buf)
    }
}

impl Encode for Proof {
    fn encode(&self, out: &mut Vec<u8>) {
        self.k.encode(out);
        self.main_block_hash.encode(out);
        self.prev_hash.encode(out);
        self.hdrs.encode(out);
        self.creator.encode(out);
        self.zone_digests.encode(out);
        self.global_digest.encode(out);
        self.state_digest.encode(out);
    }
}

/// Digest binding a zone's sync payload to its main block.
pub fn payload_digest(k: u64, payload: &ProcPayload) -> Digest {
    let mut buf = Vec::new();
    "proc-payload".encode(&mut buf);
    k.encode(&mut buf);
    payload.encode(&mut buf);
    Digest::of_bytes(&buf)
}

#[derive(Debug)]
pub struct ProcessOutput {
    pub k: u64,
    pub main_block_hash: Digest,
    pub proof: Proof,
    pub payloads: BTreeMap<ZoneId, ProcPayload>,
    pub outcomes: Vec<TxOutcome>,
    /// Modeled validation/execution cost charged as busy time.
    pub cost_us: u64,
}

/// Resolves an ordered batch's digest list into block payloads, verifying
/// each against its availability digest. Missing blocks are reported for
/// fetching; a present-but-mismatching payload is a fatal integrity error.
pub fn materialize(
    batch: &OrderedBatch,
    lookup: &dyn Fn(ZoneId, u64) -> Option<Shared<LocalBlock>>,
) -> crate::Result<std::result::Result<Vec<Shared<LocalBlock>>, Vec<(ZoneId, u64)>>> {
    let mut blocks = Vec::new();
    let mut missing = Vec::new();
    for &(zone, number, avail) in &batch.blocks {
        match lookup(zone, number) {
            None => missing.push((zone, number)),
            Some(block) => {
                if header_digest(zone, number, &block.digest()) != avail {
                    return Err(crate::Error::Integrity(format!(
                        "stored block {zone}#{number} does not match its committed digest"
                    )));
                }
                blocks.push(block);
            }
        }
    }
    if missing.is_empty() {
        Ok(Ok(blocks))
    } else {
        Ok(Err(missing))
    }
}

enum Unit<'a> {
    Local { zone: ZoneId, number: u64, offset: u32, tx: &'a Transaction, rwset: &'a crate::statedb::ReadWriteSet },
    Global { tx: &'a Transaction },
}

pub struct MainProcessor {
    pub db: StateDB,
    prev: Digest,
    next_k: u64,
    zones: Vec<ZoneId>,
    scheduling: bool,
    /// Recent per-block state digests (recovery handshake).
    pub digest_history: BTreeMap<u64, Digest>,
    history_cap: usize,
}

impl MainProcessor {
    pub fn new(db: StateDB, zones: Vec<ZoneId>, scheduling: bool) -> MainProcessor {
        MainProcessor {
            db,
            prev: Digest::zero(),
            next_k: 1,
            zones,
            scheduling,
            digest_history: BTreeMap::new(),
            history_cap: 64,
        }
    }

    pub fn next_k(&self) -> u64 {
        self.next_k
    }

    pub fn prev_hash(&self) -> Digest {
        self.prev
    }

    /// Installs recovered state (digest history stays empty; it refills).
    pub fn install(&mut self, db: StateDB, next_k: u64, prev: Digest) {
        self.db = db;
        self.next_k = next_k;
        self.prev = prev;
        self.digest_history.clear();
    }

    pub fn process(
        &mut self,
        batch: &OrderedBatch,
        blocks: &[Shared<LocalBlock>],
        me: NodeId,
        params: &ProtocolParams,
    ) -> crate::Result<ProcessOutput> {
        if batch.k != self.next_k {
            return Err(crate::Error::Integrity(format!(
                "processing block {} but expected {}",
                batch.k, self.next_k
            )));
        }
        let k = batch.k;
        let mut hash_buf = Vec::new();
        "main-block".encode(&mut hash_buf);
        k.encode(&mut hash_buf);
        self.prev.encode(&mut hash_buf);
        batch.blocks.to_vec().encode(&mut hash_buf);
        let main_block_hash = Digest::of_bytes(&hash_buf);

        let mut hdrs: BTreeMap<ZoneId, Vec<u64>> = BTreeMap::new();
        let mut units = Vec::new();
        for ((zone, number, _), block) in batch.blocks.iter().zip(blocks) {
            hdrs.entry(*zone).or_default().push(*number);
            for (offset, entry) in block.entries.iter().enumerate() {
                match entry {
                    BlockEntry::Local { tx, rwset } => units.push(Unit::Local {
                        zone: *zone,
                        number: *number,
                        offset: offset as u32,
                        tx,
                        rwset,
                    }),
                    BlockEntry::Global { tx } => units.push(Unit::Global { tx }),
                    BlockEntry::TwoPcApply { record } => {
                        return Err(crate::Error::Integrity(format!(
                            "coordinator record {} in a main-chain block",
                            record.txid
                        )))
                    }
                }
            }
        }

        let mut ents: BTreeMap<ZoneId, Vec<SyncEntry>> =
            self.zones.iter().map(|&z| (z, Vec::new())).collect();
        let mut aborted_global: BTreeMap<ZoneId, Vec<TxId>> =
            self.zones.iter().map(|&z| (z, Vec::new())).collect();
        let mut outcomes = Vec::new();
        let mut global_results: Vec<(TxId, bool)> = Vec::new();
        let mut local_counts: BTreeMap<ZoneId, u64> = BTreeMap::new();
        let mut global_count = 0u64;

        let validate_local =
            |db: &mut StateDB, ents: &mut BTreeMap<ZoneId, Vec<SyncEntry>>,
             outcomes: &mut Vec<TxOutcome>, zone: ZoneId, number: u64, offset: u32,
             tx: &Transaction, rwset: &crate::statedb::ReadWriteSet| {
                let conflicts = db.conflicts(rwset);
                if conflicts.is_empty() {
                    db.apply_writes(&rwset.writes, Version::local(zone, number, offset));
                    outcomes.push(TxOutcome {
                        txid: tx.id,
                        tx_type: TxType::Local,
                        committed: true,
                        interference: None,
                    });
                } else {
                    let same_block = conflicts.iter().any(|(_, found)| {
                        matches!(found, Some((_, v)) if v.scope == crate::types::Scope::Main && v.block == k)
                    });
                    let kind = if same_block {
                        InterferenceKind::SameBlockGlobal
                    } else {
                        InterferenceKind::CrossBlock
                    };
                    // Corrective entries: current main values for everything
                    // the zone speculatively wrote.
                    for (key, _) in &rwset.writes {
                        let value = db.get(key).map(|(v, _)| v).unwrap_or(0);
                        ents.get_mut(&zone).expect("zone known").push(SyncEntry {
                            txid: tx.id,
                            key: key.clone(),
                            value,
                        });
                    }
                    outcomes.push(TxOutcome {
                        txid: tx.id,
                        tx_type: TxType::Local,
                        committed: false,
                        interference: Some(kind),
                    });
                }
            };

        let execute_global =
            |db: &mut StateDB, ents: &mut BTreeMap<ZoneId, Vec<SyncEntry>>,
             aborted_global: &mut BTreeMap<ZoneId, Vec<TxId>>, outcomes: &mut Vec<TxOutcome>,
             global_results: &mut Vec<(TxId, bool)>, tx: &Transaction|
             -> crate::Result<()> {
                match execute_op(db, &tx.op) {
                    Ok(rwset) => {
                        for (key, value) in &rwset.writes {
                            let zone = owner_zone(key)?;
                            let list = ents.get_mut(&zone).ok_or_else(|| {
                                crate::Error::Integrity(format!("write to unknown zone {zone}"))
                            })?;
                            let idx = list.len() as u32;
                            db.put(key.clone(), *value, Version::main(k, idx));
                            list.push(SyncEntry { txid: tx.id, key: key.clone(), value: *value });
                        }
                        outcomes.push(TxOutcome {
                            txid: tx.id,
                            tx_type: TxType::Global,
                            committed: true,
                            interference: None,
                        });
                        global_results.push((tx.id, true));
                    }
                    Err(_) => {
                        aborted_global.entry(tx.submit_zone).or_default().push(tx.id);
                        outcomes.push(TxOutcome {
                            txid: tx.id,
                            tx_type: TxType::Global,
                            committed: false,
                            interference: None,
                        });
                        global_results.push((tx.id, false));
                    }
                }
                Ok(())
            };

        if self.scheduling {
            for unit in &units {
                if let Unit::Local { zone, number, offset, tx, rwset } = unit {
                    *local_counts.entry(*zone).or_default() += 1;
                    validate_local(
                        &mut self.db, &mut ents, &mut outcomes, *zone, *number, *offset, tx, rwset,
                    );
                }
            }
            for unit in &units {
                if let Unit::Global { tx } = unit {
                    global_count += 1;
                    execute_global(
                        &mut self.db,
                        &mut ents,
                        &mut aborted_global,
                        &mut outcomes,
                        &mut global_results,
                        tx,
                    )?;
                }
            }
        } else {
            for unit in &units {
                match unit {
                    Unit::Local { zone, number, offset, tx, rwset } => {
                        *local_counts.entry(*zone).or_default() += 1;
                        validate_local(
                            &mut self.db, &mut ents, &mut outcomes, *zone, *number, *offset, tx,
                            rwset,
                        );
                    }
                    Unit::Global { tx } => {
                        global_count += 1;
                        execute_global(
                            &mut self.db,
                            &mut ents,
                            &mut aborted_global,
                            &mut outcomes,
                            &mut global_results,
                            tx,
                        )?;
                    }
                }
            }
        }

        // Canonical re-stamp: every sync entry lands at (Main, k, idx) on
        // the main replica exactly as the zones will apply it. Gobal writes
        // already carry these stamps; corrective entries pick theirs up
        // here.
        for (&zone, list) in &ents {
            self.db.apply_sync_entries(zone, k, list)?;
        }

        let mut payloads = BTreeMap::new();
        let mut zone_digests = BTreeMap::new();
        for &zone in &self.zones {
            let payload = ProcPayload {
                ents: ents.remove(&zone).unwrap_or_default(),
                aborted_global: aborted_global.remove(&zone).unwrap_or_default(),
                own_numbers: hdrs.get(&zone).cloned().unwrap_or_default(),
            };
            zone_digests.insert(zone, payload_digest(k, &payload));
            payloads.insert(zone, payload);
        }
        let mut gbuf = Vec::new();
        "global-outcomes".encode(&mut gbuf);
        global_results.encode(&mut gbuf);
        let global_digest = Digest::of_bytes(&gbuf);

        let state_digest = self.db.digest();
        let proof = Proof {
            k,
            main_block_hash,
            prev_hash: self.prev,
            hdrs,
            creator: me,
            zone_digests,
            global_digest,
            state_digest,
        };
        let cost_us = params.processing_cost_us(&local_counts, global_count);

        self.prev = main_block_hash;
        self.next_k += 1;
        self.digest_history.insert(k, state_digest);
        while self.digest_history.len() > self.history_cap {
            let first = *self.digest_history.keys().next().unwrap();
            self.digest_history.remove(&first);
        }

        Ok(ProcessOutput { k, main_block_hash, proof, payloads, outcomes, cost_us })
    }
}

/// Outcome events a zone's local member derives from a received sync
/// payload: every transaction in the listed own blocks commits unless named
/// by a corrective entry (local aborts) or the aborted-global list.
pub fn derive_zone_outcomes(
    payload: &ProcPayload,
    own_blocks: &dyn Fn(u64) -> Option<Shared<LocalBlock>>,
) -> Vec<TxOutcome> {
    let corrective: BTreeSet<TxId> = payload.ents.iter().map(|e| e.txid).collect();
    let aborted_global: BTreeSet<TxId> = payload.aborted_global.iter().copied().collect();
    let mut out = Vec::new();
    for &number in &payload.own_numbers {
        let Some(block) = own_blocks(number) else { continue };
        for entry in &block.entries {
            match entry {
                BlockEntry::Local { tx, .. } => {
                    let aborted = corrective.contains(&tx.id);
                    out.push(TxOutcome {
                        txid: tx.id,
                        tx_type: TxType::Local,
                        committed: !aborted,
                        interference: None,
                    });
                }
                BlockEntry::Global { tx } => {
                    out.push(TxOutcome {
                        txid: tx.id,
                        tx_type: TxType::Global,
                        committed: !aborted_global.contains(&tx.id),
                        interference: None,
                    });
                }
                BlockEntry::TwoPcApply { .. } => {}
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::CryptoRegistry;
    use crate::localchain::{Proposer, Validator};
    use crate::statedb::StateView;
    use crate::types::{account_key, BankOp, Scope};

    fn params(scheduling: bool) -> ProtocolParams {
        ProtocolParams { scheduling, ..ProtocolParams::default() }
    }

    fn zones2() -> Vec<ZoneId> {
        vec![ZoneId(0), ZoneId(1)]
    }

    fn tx(zone: u16, seq: u32, op: BankOp) -> Transaction {
        Transaction { id: TxId { zone, client: 0, seq }, submit_zone: ZoneId(zone), op }
    }

    fn transfer(zone: u16, seq: u32, from: (u16, u32), to: (u16, u32), amount: i64) -> Transaction {
        tx(
            zone,
            seq,
            BankOp::Transfer {
                from: account_key(ZoneId(from.0), from.1),
                to: account_key(ZoneId(to.0), to.1),
                amount,
            },
        )
    }

    /// Cuts one committed block per zone out of real proposer speculation.
    fn cut_blocks(proposers: &mut [Proposer]) -> Vec<Shared<LocalBlock>> {
        proposers.iter_mut().map(|p| p.cut().expect("has txs")).collect()
    }

    fn batch_for(k: u64, cuts: &[Shared<LocalBlock>]) -> (OrderedBatch, Vec<Shared<LocalBlock>>) {
        let blocks = cuts
            .iter()
            .map(|b| (b.zone, b.number, header_digest(b.zone, b.number, &b.digest())))
            .collect();
        (
            OrderedBatch {
                k,
                anchor_round: 2 * k,
                anchor: Digest::zero(),
                vertices: vec![],
                blocks,
            },
            cuts.to_vec(),
        )
    }

    fn genesis() -> StateDB {
        StateDB::genesis(&zones2(), 8, 10_000)
    }

    #[test]
    fn locals_validate_and_globals_execute_with_sync_entries() {
        let db = genesis();
        let mut p0 = Proposer::new(ZoneId(0), NodeId(0), db.clone(), 100);
        let mut p1 = Proposer::new(ZoneId(1), NodeId(5), db.clone(), 100);
        p0.admit(transfer(0, 0, (0, 0), (0, 1), 100)).unwrap();
        p0.admit(transfer(0, 1, (0, 1), (0, 2), 50)).unwrap();
        // Global from zone 1 touching both zones.
        p1.admit(transfer(1, 0, (1, 0), (0, 3), 200)).unwrap();
        p1.admit(transfer(1, 1, (1, 1), (1, 2), 25)).unwrap();
        let cuts = cut_blocks(&mut [p0, p1].map(|p| p).into_iter().collect::<Vec<_>>());
        let (batch, blocks) = batch_for(1, &cuts);

        let mut proc = MainProcessor::new(db, zones2(), true);
        let out = proc.process(&batch, &blocks, NodeId(0), &params(true)).unwrap();
        assert!(out.outcomes.iter().all(|o| o.committed));
        // Global moved 200 from z1 acct 0 to z0 acct 3.
        assert_eq!(proc.db.get(&account_key(ZoneId(1), 0)).unwrap().0, 9_800);
        assert_eq!(proc.db.get(&account_key(ZoneId(0), 3)).unwrap().0, 10_200);
        // Sync entries: zone 0 gets the global's credit, zone 1 its debit.
        assert_eq!(out.payloads[&ZoneId(0)].ents.len(), 1);
        assert_eq!(out.payloads[&ZoneId(1)].ents.len(), 1);
        assert_eq!(out.payloads[&ZoneId(0)].ents[0].key, account_key(ZoneId(0), 3));
        // Committed local writes keep their local version stamps on main.
        let (_, v) = proc.db.get(&account_key(ZoneId(0), 2)).unwrap();
        assert_eq!(v.scope, Scope::Local(ZoneId(0)));
        // Sync-entry stamps are main-scoped.
        let (_, v) = proc.db.get(&account_key(ZoneId(0), 3)).unwrap();
        assert_eq!(v, Version::main(1, 0));
        // Cost: max(2, 1) local validations + 1 global execution.
        assert_eq!(out.cost_us, 2 * 30 + 60);
        assert_eq!(out.payloads[&ZoneId(0)].own_numbers, vec![1]);
    }

    #[test]
    fn scheduling_prevents_same_block_interference() {
        // Zone 1 submits a global writing z0/acct0; zone 0's local tx reads
        // acct0 speculatively. In τ order the global's block comes first.
        let build = || {
            let db = genesis();
            let mut p0 = Proposer::new(ZoneId(0), NodeId(0), db.clone(), 100);
            let mut p1 = Proposer::new(ZoneId(1), NodeId(5), db.clone(), 100);
            p1.admit(transfer(1, 0, (1, 0), (0, 0), 500)).unwrap();
            p0.admit(transfer(0, 0, (0, 0), (0, 1), 10)).unwrap();
            let b1 = p1.cut().unwrap();
            let b0 = p0.cut().unwrap();
            let (batch, blocks) = batch_for(1, &[b1, b0]);
            (db, batch, blocks)
        };

        let (db, batch, blocks) = build();
        let mut with = MainProcessor::new(db, zones2(), true);
        let out = with.process(&batch, &blocks, NodeId(0), &params(true)).unwrap();
        assert!(out.outcomes.iter().all(|o| o.committed), "{:?}", out.outcomes);

        let (db, batch, blocks) = build();
        let mut without = MainProcessor::new(db, zones2(), false);
        let out = without.process(&batch, &blocks, NodeId(0), &params(false)).unwrap();
        let aborted: Vec<_> = out.outcomes.iter().filter(|o| !o.committed).collect();
        assert_eq!(aborted.len(), 1);
        assert_eq!(aborted[0].interference, Some(InterferenceKind::SameBlockGlobal));
        // The corrective entry re-tells zone 0 its account 0 balance (the
        // global credited it 500 before the local validated).
        let z0 = &out.payloads[&ZoneId(0)];
        assert!(z0.ents.iter().any(|e| e.key == account_key(ZoneId(0), 0) && e.value == 10_500));
    }

    #[test]
    fn cross_block_staleness_aborts_and_corrects_the_zone() {
        let db = genesis();
        let mut p1 = Proposer::new(ZoneId(1), NodeId(5), db.clone(), 100);
        p1.admit(transfer(1, 0, (1, 0), (0, 0), 500)).unwrap();
        let gb = p1.cut().unwrap();
        let (batch1, blocks1) = batch_for(1, &[gb]);

        let mut proc = MainProcessor::new(db.clone(), zones2(), true);
        let out1 = proc.process(&batch1, &blocks1, NodeId(0), &params(true)).unwrap();
        assert!(out1.outcomes[0].committed);

        // Zone 0 speculates *without* having imported k=1's sync entries.
        let mut p0 = Proposer::new(ZoneId(0), NodeId(0), db, 100);
        p0.admit(transfer(0, 0, (0, 0), (0, 1), 10)).unwrap();
        let lb = p0.cut().unwrap();
        let (batch2, blocks2) = batch_for(2, &[lb]);
        let out2 = proc.process(&batch2, &blocks2, NodeId(0), &params(true)).unwrap();
        assert!(!out2.outcomes[0].committed);
        assert_eq!(out2.outcomes[0].interference, Some(InterferenceKind::CrossBlock));
        // Corrective entries restore both written keys to main values.
        let z0 = &out2.payloads[&ZoneId(0)];
        let mut validator = Validator::new(ZoneId(0), NodeId(1), StateDB::genesis(&zones2(), 8, 10_000));
        validator.store_proc(1, out1.payloads[&ZoneId(0)].clone());
        validator.store_proc(2, z0.clone());
        validator.flush_unapplied_syncs();
        for idx in [0u32, 1] {
            let key = account_key(ZoneId(0), idx);
            assert_eq!(validator.committed.get(&key), proc.db.get(&key), "key {key}");
        }
    }

    #[test]
    fn abort_cascade_is_cross_block_not_same_block() {
        let db = genesis();
        let mut p1 = Proposer::new(ZoneId(1), NodeId(5), db.clone(), 100);
        p1.admit(transfer(1, 0, (1, 0), (0, 0), 500)).unwrap();
        let gb = p1.cut().unwrap();
        let (batch1, blocks1) = batch_for(1, &[gb]);
        let mut proc = MainProcessor::new(db.clone(), zones2(), true);
        proc.process(&batch1, &blocks1, NodeId(0), &params(true)).unwrap();

        // t0 reads the stale acct0, t1 reads t0's output: both abort, both
        // classified as cross-block (no same-main-block global involved).
        let mut p0 = Proposer::new(ZoneId(0), NodeId(0), db, 100);
        p0.admit(transfer(0, 0, (0, 0), (0, 1), 10)).unwrap();
        p0.admit(transfer(0, 1, (0, 1), (0, 2), 5)).unwrap();
        let lb = p0.cut().unwrap();
        let (batch2, blocks2) = batch_for(2, &[lb]);
        let out = proc.process(&batch2, &blocks2, NodeId(0), &params(true)).unwrap();
        let aborted: Vec<_> = out.outcomes.iter().filter(|o| !o.committed).collect();
        assert_eq!(aborted.len(), 2);
        assert!(aborted
            .iter()
            .all(|o| o.interference == Some(InterferenceKind::CrossBlock)));
    }

    #[test]
    fn failed_global_aborts_without_state_change() {
        let db = genesis();
        let mut p0 = Proposer::new(ZoneId(0), NodeId(0), db.clone(), 100);
        // Foreign account index 999 does not exist.
        p0.admit(transfer(0, 0, (0, 0), (1, 999), 10)).unwrap();
        let b = p0.cut().unwrap();
        let (batch, blocks) = batch_for(1, &[b]);
        let mut proc = MainProcessor::new(db.clone(), zones2(), true);
        let out = proc.process(&batch, &blocks, NodeId(0), &params(true)).unwrap();
        assert!(!out.outcomes[0].committed);
        assert_eq!(out.payloads[&ZoneId(0)].aborted_global, vec![TxId { zone: 0, client: 0, seq: 0 }]);
        assert!(out.payloads.values().all(|p| p.ents.is_empty()));
        assert_eq!(proc.db.snapshot_bytes(), db.snapshot_bytes());
    }

    #[test]
    fn proofs_agree_across_members_and_chain_hashes_link() {
        let db = genesis();
        let mut p0 = Proposer::new(ZoneId(0), NodeId(0), db.clone(), 100);
        p0.admit(transfer(0, 0, (0, 0), (0, 1), 100)).unwrap();
        p0.admit(transfer(0, 1, (1, 0), (0, 2), 40)).unwrap();
        let b = p0.cut().unwrap();
        let (batch, blocks) = batch_for(1, &[b]);

        let mut m1 = MainProcessor::new(db.clone(), zones2(), true);
        let mut m2 = MainProcessor::new(db.clone(), zones2(), true);
        let o1 = m1.process(&batch, &blocks, NodeId(0), &params(true)).unwrap();
        let o2 = m2.process(&batch, &blocks, NodeId(5), &params(true)).unwrap();
        assert_ne!(o1.proof.creator, o2.proof.creator);
        assert_eq!(o1.proof.core_digest(), o2.proof.core_digest());
        assert_eq!(o1.proof.prev_hash, Digest::zero());

        // A member with diverged state produces a mismatching proof.
        let mut bad_db = db.clone();
        bad_db.put(account_key(ZoneId(0), 7), 1, Version::genesis(ZoneId(0), 7));
        let mut m3 = MainProcessor::new(bad_db, zones2(), true);
        let o3 = m3.process(&batch, &blocks, NodeId(9), &params(true)).unwrap();
        assert_ne!(o1.proof.core_digest(), o3.proof.core_digest());

        // Chain continues.
        let mut p0b = Proposer::new(ZoneId(0), NodeId(0), m1.db.clone(), 100);
        p0b.admit(tx(0, 7, BankOp::Refresh { key: account_key(ZoneId(0), 0) })).unwrap();
        let mut b2 = (*p0b.cut().unwrap()).clone();
        b2.number = 2; // second block of the zone on main
        let b2 = Shared::new(b2);
        let (mut batch2, blocks2) = batch_for(2, &[b2]);
        batch2.k = 2;
        let o4 = m1.process(&batch2, &blocks2, NodeId(0), &params(true)).unwrap();
        assert_eq!(o4.proof.prev_hash, o1.main_block_hash);
        assert_eq!(m1.digest_history.len(), 2);
    }

    #[test]
    fn zone_outcome_derivation_matches_processing_outcomes() {
        let db = genesis();
        let mut p1 = Proposer::new(ZoneId(1), NodeId(5), db.clone(), 100);
        p1.admit(transfer(1, 0, (1, 0), (0, 0), 500)).unwrap();
        let gb = p1.cut().unwrap();
        let mut p0 = Proposer::new(ZoneId(0), NodeId(0), db.clone(), 100);
        p0.admit(transfer(0, 0, (0, 0), (0, 1), 10)).unwrap();
        p0.admit(transfer(0, 1, (1, 999), (0, 2), 1)).unwrap(); // failing global
        let lb = p0.cut().unwrap();
        let (batch, blocks) = batch_for(1, &[gb, lb.clone()]);
        let mut proc = MainProcessor::new(db, zones2(), false);
        let out = proc.process(&batch, &blocks, NodeId(0), &params(false)).unwrap();

        let derived = derive_zone_outcomes(&out.payloads[&ZoneId(0)], &|n| {
            (n == 1).then(|| lb.clone())
        });
        // Zone 0's block holds one local (aborted by same-block global) and
        // one failing global.
        assert_eq!(derived.len(), 2);
        for d in &derived {
            let main = out.outcomes.iter().find(|o| o.txid == d.txid).unwrap();
            assert_eq!(d.committed, main.committed, "{:?}", d.txid);
        }
    }

    #[test]
    fn coordinator_records_are_foreign_to_the_main_chain() {
        let db = genesis();
        let mut crypto = CryptoRegistry::new();
        let digest = crate::alt::DecisionRecord::payload_digest(
            TxId { zone: 0, client: 0, seq: 0 },
            ZoneId(0),
            &[],
        );
        let token = crypto.sign(NodeId(0), &digest);
        let block = Shared::new(LocalBlock {
            zone: ZoneId(0),
            number: 1,
            prev: Digest::zero(),
            proposer: NodeId(0),
            sync_points: vec![],
            entries: vec![BlockEntry::TwoPcApply {
                record: crate::alt::DecisionRecord {
                    txid: TxId { zone: 0, client: 0, seq: 0 },
                    zone: ZoneId(0),
                    writes: vec![],
                    token,
                },
            }],
        });
        let (batch, blocks) = batch_for(1, &[block]);
        let mut proc = MainProcessor::new(db, zones2(), true);
        assert!(matches!(
            proc.process(&batch, &blocks, NodeId(0), &params(true)),
            Err(crate::Error::Integrity(_))
        ));
    }

    #[test]
    fn materialize_verifies_digests_and_reports_missing() {
        let db = genesis();
        let mut p0 = Proposer::new(ZoneId(0), NodeId(0), db, 100);
        p0.admit(transfer(0, 0, (0, 0), (0, 1), 1)).unwrap();
        let b = p0.cut().unwrap();
        let (batch, _) = batch_for(1, &[b.clone()]);

        let missing = materialize(&batch, &|_, _| None).unwrap().unwrap_err();
        assert_eq!(missing, vec![(ZoneId(0), 1)]);

        let got = materialize(&batch, &|_, _| Some(b.clone())).unwrap().unwrap();
        assert_eq!(got.len(), 1);

        let mut tampered = (*b).clone();
        tampered.entries.clear();
        let tampered = Shared::new(tampered);
        assert!(materialize(&batch, &|_, _| Some(tampered.clone())).is_err());
    }
}
