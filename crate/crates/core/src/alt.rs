//! The two baseline sharding schemes the balanced design is compared
//! against.
//!
//! *Availability*: identical pipeline to the balanced scheme, except every
//! full member forwards every zone's block payloads to its own local
//! members, so all members store the full ledger. Pure message/storage
//! overhead — the forwarding itself lives in the node layer; no extra state
//! machine is needed here.
//!
//! *Performance*: local transactions use the zone pipeline unchanged, but
//! global transactions bypass the main chain entirely and run through a
//! single coordinator (the first zone's full member) with fail-fast
//! two-phase commit. Participant full members lock the involved keys at
//! prepare time and vote with their current speculative values; the
//! coordinator executes once all votes are in and ships signed per-zone
//! decision records, which participants feed through local consensus as
//! `TwoPcApply` entries. A vote on a locked key, a missing account, or a
//! participant timeout aborts the transaction everywhere. Local
//! transactions touching locked keys are parked and replayed on release so
//! speculation can never invalidate prepared values.

use std::collections::BTreeMap;

use crate::codec::Encode;
use crate::crypto::{CryptoRegistry, Digest, SigToken};
use crate::statedb::StateView;
use crate::types::{owner_zone, BankOp, Key, NodeId, Transaction, TxId, ZoneId};

/// Coordinator-signed outcome of a committed 2PC transaction, restricted to
/// one zone's writes. Carried inside local blocks and verified by every
/// local member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionRecord {
    pub txid: TxId,
    pub zone: ZoneId,
    pub writes: Vec<(Key, i64)>,
    pub token: SigToken,
}

impl Encode for DecisionRecord {
    fn encode(&self, out: &mut Vec<u8>) {
        self.txid.encode(out);
        self.zone.encode(out);
        self.writes.encode(out);
        self.token.encode(out);
    }
}

impl DecisionRecord {
    pub fn payload_digest(txid: TxId, zone: ZoneId, writes: &[(Key, i64)]) -> Digest {
        let mut buf = Vec::new();
        "2pc-decision".encode(&mut buf);
        txid.encode(&mut buf);
        zone.encode(&mut buf);
        writes.to_vec().encode(&mut buf);
        Digest::of_bytes(&buf)
    }

    pub fn verify(&self, crypto: &CryptoRegistry, coordinator: NodeId) -> bool {
        let digest = Self::payload_digest(self.txid, self.zone, &self.writes);
        crypto.verify(coordinator, &digest, &self.token)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoordAction {
    Prepare { zone: ZoneId, txid: TxId, keys: Vec<Key> },
    /// Commit decision with this zone's writes.
    Decide { zone: ZoneId, record: DecisionRecord },
    /// Abort decision: release locks, nothing to apply.
    Abort { zone: ZoneId, txid: TxId },
    /// Final outcome for the submitting zone's clients.
    Outcome { zone: ZoneId, txid: TxId, committed: bool },
}

struct TxState {
    tx: Transaction,
    involved: Vec<ZoneId>,
    votes: BTreeMap<ZoneId, Vec<(Key, i64)>>,
    decided: bool,
}

/// 2PC coordinator; colocated with the first zone's full member.
pub struct Coordinator {
    pub me: NodeId,
    states: BTreeMap<TxId, TxState>,
}

impl Coordinator {
    pub fn new(me: NodeId) -> Coordinator {
        Coordinator { me, states: BTreeMap::new() }
    }

    /// Starts a 2PC round for a classified-global transaction.
    pub fn begin(&mut self, tx: Transaction) -> crate::Result<Vec<CoordAction>> {
        let mut zones: BTreeMap<ZoneId, Vec<Key>> = BTreeMap::new();
        for key in tx.op.keys() {
            zones.entry(owner_zone(key)?).or_default().push(key.clone());
        }
        for keys in zones.values_mut() {
            keys.sort();
            keys.dedup();
        }
        let involved: Vec<ZoneId> = zones.keys().copied().collect();
        let txid = tx.id;
        let actions = zones
            .into_iter()
            .map(|(zone, keys)| CoordAction::Prepare { zone, txid, keys })
            .collect();
        self.states.insert(txid, TxState { tx, involved, votes: BTreeMap::new(), decided: false });
        Ok(actions)
    }

    /// Handles one participant vote; `values` is None for a no-vote.
    pub fn on_vote(
        &mut self,
        txid: TxId,
        zone: ZoneId,
        values: Option<Vec<(Key, i64)>>,
        crypto: &mut CryptoRegistry,
    ) -> Vec<CoordAction> {
        let Some(state) = self.states.get_mut(&txid) else { return Vec::new() };
        if state.decided || !state.involved.contains(&zone) || state.votes.contains_key(&zone) {
            return Vec::new();
        }
        match values {
            None => self.abort(txid),
            Some(values) => {
                state.votes.insert(zone, values);
                if state.votes.len() == state.involved.len() {
                    self.commit(txid, crypto)
                } else {
                    Vec::new()
                }
            }
        }
    }

    /// Vote-collection timeout: aborts if still undecided.
    pub fn on_timeout(&mut self, txid: TxId) -> Vec<CoordAction> {
        match self.states.get(&txid) {
            Some(s) if !s.decided => self.abort(txid),
            _ => Vec::new(),
        }
    }

    fn abort(&mut self, txid: TxId) -> Vec<CoordAction> {
        let state = self.states.get_mut(&txid).unwrap();
        state.decided = true;
        let mut actions: Vec<CoordAction> = state
            .involved
            .iter()
            .map(|&zone| CoordAction::Abort { zone, txid })
            .collect();
        actions.push(CoordAction::Outcome {
            zone: state.tx.submit_zone,
            txid,
            committed: false,
        });
        actions
    }

    fn commit(&mut self, txid: TxId, crypto: &mut CryptoRegistry) -> Vec<CoordAction> {
        let state = self.states.get_mut(&txid).unwrap();
        state.decided = true;
        let mut values: BTreeMap<Key, i64> = BTreeMap::new();
        for votes in state.votes.values() {
            for (key, value) in votes {
                values.insert(key.clone(), *value);
            }
        }
        let writes = decide_writes(&state.tx.op, &values);
        let mut per_zone: BTreeMap<ZoneId, Vec<(Key, i64)>> = BTreeMap::new();
        for (key, value) in writes {
            per_zone.entry(owner_zone(&key).unwrap()).or_default().push((key, value));
        }
        let me = self.me;
        let mut actions: Vec<CoordAction> = state
            .involved
            .iter()
            .map(|&zone| {
                let writes = per_zone.remove(&zone).unwrap_or_default();
                let digest = DecisionRecord::payload_digest(txid, zone, &writes);
                let token = crypto.sign(me, &digest);
                CoordAction::Decide {
                    zone,
                    record: DecisionRecord { txid, zone, writes, token },
                }
            })
            .collect();
        actions.push(CoordAction::Outcome { zone: state.tx.submit_zone, txid, committed: true });
        actions
    }

    /// Transactions begun but never decided (for run-end accounting).
    pub fn undecided(&self) -> Vec<TxId> {
        self.states.iter().filter(|(_, s)| !s.decided).map(|(&id, _)| id).collect()
    }
}

/// Write set of a committed 2PC transaction, mirroring the single-chain
/// execution semantics: insufficient funds and self-transfers commit as
/// identity rewrites.
fn decide_writes(op: &BankOp, values: &BTreeMap<Key, i64>) -> Vec<(Key, i64)> {
    let mut writes = match op {
        BankOp::Transfer { from, to, amount } => {
            let f = values[from];
            if from == to {
                vec![(from.clone(), f)]
            } else {
                let t = values[to];
                if f < *amount {
                    vec![(from.clone(), f), (to.clone(), t)]
                } else {
                    vec![(from.clone(), f - amount), (to.clone(), t + amount)]
                }
            }
        }
        BankOp::Deposit { to, amount } => vec![(to.clone(), values[to] + amount)],
        BankOp::Refresh { key } => vec![(key.clone(), values[key])],
    };
    writes.sort_by(|a, b| a.0.cmp(&b.0));
    writes
}

/// Per-zone participant side, colocated with the zone's full member.
#[derive(Default)]
pub struct Participant {
    locks: BTreeMap<Key, TxId>,
    parked: Vec<Transaction>,
}

impl Participant {
    pub fn new() -> Participant {
        Participant::default()
    }

    /// Vote on a prepare request: locks the keys and returns their current
    /// values, or None (no-vote) on a lock conflict or unknown account.
    pub fn on_prepare(
        &mut self,
        txid: TxId,
        keys: &[Key],
        view: &dyn StateView,
    ) -> Option<Vec<(Key, i64)>> {
        if keys.iter().any(|k| self.locks.contains_key(k)) {
            return None;
        }
        let mut values = Vec::new();
        for key in keys {
            values.push((key.clone(), view.get(key)?.0));
        }
        for key in keys {
            self.locks.insert(key.clone(), txid);
        }
        Some(values)
    }

    /// Gate for local-transaction admission: parks the transaction if any of
    /// its keys is locked, otherwise hands it back for normal speculation.
    pub fn admit_or_park(&mut self, tx: Transaction) -> Option<Transaction> {
        if tx.op.keys().iter().any(|k| self.locks.contains_key(*k)) {
            self.parked.push(tx);
            None
        } else {
            Some(tx)
        }
    }

    /// Releases the transaction's locks; returns parked local transactions
    /// that became unblocked, in arrival order.
    pub fn release(&mut self, txid: TxId) -> Vec<Transaction> {
        self.locks.retain(|_, holder| *holder != txid);
        let parked = std::mem::take(&mut self.parked);
        let (ready, still): (Vec<_>, Vec<_>) = parked
            .into_iter()
            .partition(|tx| tx.op.keys().iter().all(|k| !self.locks.contains_key(*k)));
        self.parked = still;
        ready
    }

    pub fn locked_keys(&self) -> usize {
        self.locks.len()
    }

    /// Parked transactions never released (for run-end accounting).
    pub fn stuck(&mut self) -> Vec<Transaction> {
        std::mem::take(&mut self.parked)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statedb::StateDB;
    use crate::types::account_key;
    use std::collections::BTreeSet;

    fn global_transfer(seq: u32, from_zone: u16, to_zone: u16, amount: i64) -> Transaction {
        Transaction {
            id: TxId { zone: from_zone, client: 0, seq },
            submit_zone: ZoneId(from_zone),
            op: BankOp::Transfer {
                from: account_key(ZoneId(from_zone), 0),
                to: account_key(ZoneId(to_zone), 0),
                amount,
            },
        }
    }

    #[test]
    fn two_zone_commit_produces_signed_per_zone_records() {
        let mut crypto = CryptoRegistry::new();
        let coord_id = NodeId(0);
        let mut coord = Coordinator::new(coord_id);
        let zones = [ZoneId(0), ZoneId(1)];
        let db = StateDB::genesis(&zones, 4, 1_000);
        let mut parts: BTreeMap<ZoneId, Participant> =
            zones.iter().map(|&z| (z, Participant::new())).collect();

        let tx = global_transfer(0, 0, 1, 250);
        let txid = tx.id;
        let prepares = coord.begin(tx).unwrap();
        assert_eq!(prepares.len(), 2);

        let mut decisions = Vec::new();
        for action in prepares {
            let CoordAction::Prepare { zone, txid, keys } = action else { panic!() };
            let vote = parts.get_mut(&zone).unwrap().on_prepare(txid, &keys, &db);
            decisions.extend(coord.on_vote(txid, zone, vote, &mut crypto));
        }
        let mut committed_zones = BTreeSet::new();
        let mut outcome = None;
        for action in decisions {
            match action {
                CoordAction::Decide { zone, record } => {
                    assert!(record.verify(&crypto, coord_id));
                    assert!(record.writes.iter().all(|(k, _)| owner_zone(k).unwrap() == zone));
                    committed_zones.insert(zone);
                    let expected = if zone == ZoneId(0) { 750 } else { 1_250 };
                    assert_eq!(record.writes[0].1, expected);
                    parts.get_mut(&zone).unwrap().release(record.txid);
                }
                CoordAction::Outcome { zone, txid: t, committed } => {
                    outcome = Some((zone, t, committed));
                }
                other => panic!("{other:?}"),
            }
        }
        assert_eq!(committed_zones.len(), 2);
        assert_eq!(outcome, Some((ZoneId(0), txid, true)));
        assert!(parts.values().all(|p| p.locked_keys() == 0));
    }

    #[test]
    fn lock_conflict_aborts_second_transaction() {
        let mut crypto = CryptoRegistry::new();
        let mut coord = Coordinator::new(NodeId(0));
        let zones = [ZoneId(0), ZoneId(1)];
        let db = StateDB::genesis(&zones, 4, 1_000);
        let mut part = Participant::new();

        let tx1 = global_transfer(0, 0, 1, 10);
        let tx2 = global_transfer(1, 0, 1, 20); // same keys
        let p1 = coord.begin(tx1).unwrap();
        let p2 = coord.begin(tx2).unwrap();
        // Zone 0 sees tx1's prepare first and locks the key.
        let CoordAction::Prepare { txid: t1, keys: k1, .. } = &p1[0] else { panic!() };
        let CoordAction::Prepare { txid: t2, keys: k2, .. } = &p2[0] else { panic!() };
        assert!(part.on_prepare(*t1, k1, &db).is_some());
        let vote2 = part.on_prepare(*t2, k2, &db);
        assert!(vote2.is_none());
        let actions = coord.on_vote(*t2, ZoneId(0), vote2, &mut crypto);
        assert!(actions
            .iter()
            .any(|a| matches!(a, CoordAction::Outcome { committed: false, .. })));
        assert!(actions.iter().all(|a| !matches!(a, CoordAction::Decide { .. })));
    }

    #[test]
    fn timeout_aborts_and_releases_everywhere() {
        let mut crypto = CryptoRegistry::new();
        let mut coord = Coordinator::new(NodeId(0));
        let db = StateDB::genesis(&[ZoneId(0), ZoneId(1)], 4, 1_000);
        let mut part = Participant::new();
        let tx = global_transfer(0, 0, 1, 10);
        let txid = tx.id;
        let prepares = coord.begin(tx).unwrap();
        let CoordAction::Prepare { keys, .. } = &prepares[0] else { panic!() };
        part.on_prepare(txid, keys, &db).unwrap();
        // Zone 1 never votes (crashed): timeout fires.
        let actions = coord.on_timeout(txid);
        assert_eq!(
            actions
                .iter()
                .filter(|a| matches!(a, CoordAction::Abort { .. }))
                .count(),
            2
        );
        part.release(txid);
        assert_eq!(part.locked_keys(), 0);
        // Late vote after the decision is ignored.
        assert!(coord.on_vote(txid, ZoneId(1), Some(vec![]), &mut crypto).is_empty());
    }

    #[test]
    fn insufficient_funds_commits_with_identity_writes() {
        let mut crypto = CryptoRegistry::new();
        let mut coord = Coordinator::new(NodeId(0));
        let db = StateDB::genesis(&[ZoneId(0), ZoneId(1)], 4, 100);
        let mut parts: BTreeMap<ZoneId, Participant> =
            [(ZoneId(0), Participant::new()), (ZoneId(1), Participant::new())].into();
        let tx = global_transfer(0, 0, 1, 5_000);
        let prepares = coord.begin(tx).unwrap();
        let mut actions = Vec::new();
        for p in prepares {
            let CoordAction::Prepare { zone, txid, keys } = p else { panic!() };
            let vote = parts.get_mut(&zone).unwrap().on_prepare(txid, &keys, &db);
            actions.extend(coord.on_vote(txid, zone, vote, &mut crypto));
        }
        for a in &actions {
            if let CoordAction::Decide { record, .. } = a {
                assert_eq!(record.writes[0].1, 100); // unchanged balance
            }
        }
        assert!(actions
            .iter()
            .any(|a| matches!(a, CoordAction::Outcome { committed: true, .. })));
    }

    #[test]
    fn parked_local_replays_after_release() {
        let db = StateDB::genesis(&[ZoneId(0)], 4, 1_000);
        let mut part = Participant::new();
        let gtx = TxId { zone: 0, client: 1, seq: 0 };
        part.on_prepare(gtx, &[account_key(ZoneId(0), 0)], &db).unwrap();
        let local = Transaction {
            id: TxId { zone: 0, client: 0, seq: 0 },
            submit_zone: ZoneId(0),
            op: BankOp::Transfer {
                from: account_key(ZoneId(0), 0),
                to: account_key(ZoneId(0), 1),
                amount: 1,
            },
        };
        assert!(part.admit_or_park(local.clone()).is_none());
        let untouched = Transaction {
            id: TxId { zone: 0, client: 0, seq: 1 },
            submit_zone: ZoneId(0),
            op: BankOp::Refresh { key: account_key(ZoneId(0), 3) },
        };
        assert!(part.admit_or_park(untouched).is_some());
        let replayed = part.release(gtx);
        assert_eq!(replayed, vec![local]);
        assert_eq!(part.locked_keys(), 0);
    }

    #[test]
    fn unknown_account_vote_fails() {
        let db = StateDB::genesis(&[ZoneId(0)], 4, 1_000);
        let mut part = Participant::new();
        let vote = part.on_prepare(
            TxId { zone: 0, client: 0, seq: 0 },
            &[account_key(ZoneId(0), 999)],
            &db,
        );
        assert!(vote.is_none());
        assert_eq!(part.locked_keys(), 0);
    }
}
