//! Versioned account store with MVCC-style validation.
//!
//! Every key holds `(balance, version)`. Speculative execution records the
//! versions it read; later validation on the main chain checks those reads
//! are still current (value-blind, version-exact). Writes stamp the writing
//! chain's position: local blocks stamp `(Local(zone), block, txOffset)`,
//! main-chain execution stamps `(Main, k, entryIndex)`. Sync entries push
//! main-chain results back into zone replicas, overwriting speculative state.

use std::collections::BTreeMap;

use crate::codec::{Decoder, Encode};
use crate::crypto::Digest;
use crate::types::{account_key, owner_zone, BankOp, Key, TxId, Version, ZoneId};

/// Reads carry the exact version consumed; writes carry final values.
/// Both lists are key-sorted and duplicate-free.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReadWriteSet {
    pub reads: Vec<(Key, Version)>,
    pub writes: Vec<(Key, i64)>,
}

impl Encode for ReadWriteSet {
    fn encode(&self, out: &mut Vec<u8>) {
        self.reads.encode(out);
        self.writes.encode(out);
    }
}

/// One main-chain write synced back to the owning zone: the transaction that
/// caused it, the key, and the latest main-chain value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncEntry {
    pub txid: TxId,
    pub key: Key,
    pub value: i64,
}

impl Encode for SyncEntry {
    fn encode(&self, out: &mut Vec<u8>) {
        self.txid.encode(out);
        self.key.encode(out);
        self.value.encode(out);
    }
}

/// Read access used by execution; satisfied by `StateDB` directly and by the
/// write-buffer overlays in the local-chain module.
pub trait StateView {
    fn get(&self, key: &str) -> Option<(i64, Version)>;
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StateDB {
    entries: BTreeMap<Key, (i64, Version)>,
}

impl StateView for StateDB {
    fn get(&self, key: &str) -> Option<(i64, Version)> {
        self.entries.get(key).copied()
    }
}

impl StateDB {
    pub fn new() -> StateDB {
        StateDB::default()
    }

    /// Seeds `accounts` balances for each listed zone at genesis versions
    /// `(Local(zone), 0, idx)`. The main replica seeds all zones; a zone
    /// replica seeds only its own.
    pub fn genesis(zones: &[ZoneId], accounts_per_zone: u32, init_balance: i64) -> StateDB {
        let mut db = StateDB::new();
        for &z in zones {
            for idx in 0..accounts_per_zone {
                db.entries.insert(account_key(z, idx), (init_balance, Version::genesis(z, idx)));
            }
        }
        db
    }

    pub fn put(&mut self, key: Key, value: i64, version: Version) {
        self.entries.insert(key, (value, version));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key, &(i64, Version))> {
        self.entries.iter()
    }

    /// MVCC check: every recorded read must still see the exact version it
    /// consumed. Missing keys fail.
    pub fn validate(&self, rwset: &ReadWriteSet) -> bool {
        self.conflicts(rwset).is_empty()
    }

    /// All conflicting reads, with what the store currently holds for each
    /// (None if the key vanished). Empty means the read set validates.
    pub fn conflicts(&self, rwset: &ReadWriteSet) -> Vec<(Key, Option<(i64, Version)>)> {
        rwset
            .reads
            .iter()
            .filter_map(|(key, read_v)| match self.get(key) {
                Some((_, cur_v)) if cur_v == *read_v => None,
                found => Some((key.clone(), found)),
            })
            .collect()
    }

    /// Applies a transaction's writes with one version stamp (its chain
    /// position).
    pub fn apply_writes(&mut self, writes: &[(Key, i64)], version: Version) {
        for (key, value) in writes {
            self.entries.insert(key.clone(), (*value, version));
        }
    }

    /// Applies main-chain entries for `zone` out of main block `k`, stamping
    /// `(Main, k, idx)` by list position — the same versions the main
    /// replica assigned. Foreign-owned keys are an integrity violation.
    pub fn apply_sync_entries(
        &mut self,
        zone: ZoneId,
        k: u64,
        entries: &[SyncEntry],
    ) -> crate::Result<()> {
        for (idx, ent) in entries.iter().enumerate() {
            let owner = owner_zone(&ent.key)?;
            if owner != zone {
                return Err(crate::Error::Integrity(format!(
                    "sync entry for {} owned by {} applied to zone {}",
                    ent.key, owner, zone
                )));
            }
            self.entries.insert(ent.key.clone(), (ent.value, Version::main(k, idx as u32)));
        }
        Ok(())
    }

    pub fn sum_balances(&self) -> i64 {
        self.entries.values().map(|(v, _)| *v).sum()
    }

    /// Canonical snapshot bytes; `Digest::of_bytes` of this is the state
    /// digest exchanged during recovery.
    pub fn snapshot_bytes(&self) -> Vec<u8> {
        self.entries.encoded()
    }

    pub fn digest(&self) -> Digest {
        Digest::of_bytes(&self.snapshot_bytes())
    }

    pub fn from_snapshot_bytes(bytes: &[u8]) -> crate::Result<StateDB> {
        let mut d = Decoder::new(bytes);
        let n = d.u32()?;
        let mut entries = BTreeMap::new();
        for _ in 0..n {
            let key = d.string()?;
            let value = d.i64()?;
            let version = Version::decode(&mut d)?;
            entries.insert(key, (value, version));
        }
        d.finish()?;
        Ok(StateDB { entries })
    }
}

/// Runs one banking op against a view, returning the read/write set without
/// mutating anything. Unknown accounts are rejected (malformed submission).
pub fn execute_op(view: &dyn StateView, op: &BankOp) -> crate::Result<ReadWriteSet> {
    let read = |key: &Key| -> crate::Result<(i64, Version)> {
        view.get(key)
            .ok_or_else(|| crate::Error::Other(format!("unknown account {key}")))
    };
    let mut rwset = ReadWriteSet::default();
    match op {
        BankOp::Transfer { from, to, amount } => {
            let (from_bal, from_v) = read(from)?;
            let (to_bal, to_v) = read(to)?;
            rwset.reads.push((from.clone(), from_v));
            rwset.reads.push((to.clone(), to_v));
            if from_bal >= *amount && from != to {
                rwset.writes.push((from.clone(), from_bal - amount));
                rwset.writes.push((to.clone(), to_bal + amount));
            } else {
                // Insufficient funds (or self-transfer): commit as a no-op
                // rewrite so the conflict footprint stays identical.
                rwset.writes.push((from.clone(), from_bal));
                rwset.writes.push((to.clone(), to_bal));
            }
        }
        BankOp::Deposit { to, amount } => {
            let (bal, v) = read(to)?;
            rwset.reads.push((to.clone(), v));
            rwset.writes.push((to.clone(), bal + amount));
        }
        BankOp::Refresh { key } => {
            let (bal, v) = read(key)?;
            rwset.reads.push((key.clone(), v));
            rwset.writes.push((key.clone(), bal));
        }
    }
    rwset.reads.sort_by(|a, b| a.0.cmp(&b.0));
    rwset.reads.dedup_by(|a, b| a.0 == b.0);
    rwset.writes.sort_by(|a, b| a.0.cmp(&b.0));
    rwset.writes.dedup_by(|a, b| a.0 == b.0);
    Ok(rwset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Scope, TxId};
    use proptest::prelude::*;

    fn z(n: u16) -> ZoneId {
        ZoneId(n)
    }

    #[test]
    fn genesis_seeds_initial_versions() {
        let db = StateDB::genesis(&[z(0), z(1)], 3, 100);
        assert_eq!(db.len(), 6);
        assert_eq!(
            db.get(&account_key(z(1), 2)),
            Some((100, Version { scope: Scope::Local(z(1)), block: 0, offset: 2 }))
        );
        assert_eq!(db.sum_balances(), 600);
    }

    #[test]
    fn transfer_moves_funds_and_records_reads() {
        let db = StateDB::genesis(&[z(0)], 2, 100);
        let op = BankOp::Transfer {
            from: account_key(z(0), 0),
            to: account_key(z(0), 1),
            amount: 30,
        };
        let rwset = execute_op(&db, &op).unwrap();
        assert_eq!(rwset.reads.len(), 2);
        assert_eq!(
            rwset.writes,
            vec![(account_key(z(0), 0), 70), (account_key(z(0), 1), 130)]
        );
        // Insufficient funds commits the unchanged balances.
        let broke = BankOp::Transfer {
            from: account_key(z(0), 0),
            to: account_key(z(0), 1),
            amount: 1000,
        };
        let rwset = execute_op(&db, &broke).unwrap();
        assert_eq!(
            rwset.writes,
            vec![(account_key(z(0), 0), 100), (account_key(z(0), 1), 100)]
        );
        assert!(execute_op(&db, &BankOp::Refresh { key: "z00/acct/999999".into() }).is_err());
    }

    #[test]
    fn validation_is_version_exact() {
        let mut db = StateDB::genesis(&[z(0)], 2, 100);
        let op = BankOp::Deposit { to: account_key(z(0), 0), amount: 5 };
        let rwset = execute_op(&db, &op).unwrap();
        assert!(db.validate(&rwset));
        // A later write to the same key invalidates the recorded read...
        db.apply_writes(&[(account_key(z(0), 0), 42)], Version::local(z(0), 1, 0));
        assert!(!db.validate(&rwset));
        // ...but touching a different key does not.
        let rwset2 = execute_op(&db, &op).unwrap();
        db.apply_writes(&[(account_key(z(0), 1), 7)], Version::local(z(0), 1, 1));
        assert!(db.validate(&rwset2));
    }

    #[test]
    fn sync_entries_stamp_main_versions_and_check_ownership() {
        let tid = TxId { zone: 2, client: 0, seq: 9 };
        let mut db = StateDB::genesis(&[z(2)], 2, 100);
        let ents = vec![
            SyncEntry { txid: tid, key: account_key(z(2), 0), value: 55 },
            SyncEntry { txid: tid, key: account_key(z(2), 1), value: 66 },
        ];
        db.apply_sync_entries(z(2), 9, &ents).unwrap();
        assert_eq!(db.get(&account_key(z(2), 0)), Some((55, Version::main(9, 0))));
        assert_eq!(db.get(&account_key(z(2), 1)), Some((66, Version::main(9, 1))));
        // Re-applying the same k is a no-op.
        let before = db.snapshot_bytes();
        db.apply_sync_entries(z(2), 9, &ents).unwrap();
        assert_eq!(db.snapshot_bytes(), before);

        let foreign = vec![SyncEntry { txid: tid, key: account_key(z(3), 0), value: 1 }];
        assert!(matches!(
            db.apply_sync_entries(z(2), 10, &foreign),
            Err(crate::Error::Integrity(_))
        ));
    }

    #[test]
    fn snapshot_round_trips_byte_identical() {
        let mut db = StateDB::genesis(&[z(0), z(4)], 5, 10_000);
        db.apply_writes(&[(account_key(z(4), 3), 123)], Version::main(7, 2));
        let bytes = db.snapshot_bytes();
        let back = StateDB::from_snapshot_bytes(&bytes).unwrap();
        assert_eq!(back, db);
        assert_eq!(back.snapshot_bytes(), bytes);
        assert_eq!(back.digest(), db.digest());
        assert!(StateDB::from_snapshot_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn rwset_digest_ignores_builder_input_order() {
        // The canonical rwset is key-sorted, so digests match however the
        // op's keys were ordered by the caller.
        let db = StateDB::genesis(&[z(0)], 4, 100);
        let ab = execute_op(
            &db,
            &BankOp::Transfer { from: account_key(z(0), 0), to: account_key(z(0), 1), amount: 1 },
        )
        .unwrap();
        assert!(ab.writes.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(ab.reads.windows(2).all(|w| w[0].0 < w[1].0));
        let ba = execute_op(
            &db,
            &BankOp::Transfer { from: account_key(z(0), 1), to: account_key(z(0), 0), amount: 0 },
        )
        .unwrap();
        assert!(ba.writes.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn self_transfer_is_a_noop_rewrite() {
        let db = StateDB::genesis(&[z(0)], 1, 100);
        let key = account_key(z(0), 0);
        let rwset = execute_op(
            &db,
            &BankOp::Transfer { from: key.clone(), to: key.clone(), amount: 10 },
        )
        .unwrap();
        assert_eq!(rwset.writes, vec![(key.clone(), 100)]);
        assert_eq!(rwset.reads.len(), 1);
    }

    proptest! {
        /// Money is conserved by any committed transfer/refresh sequence and
        /// grows by exactly the deposit amounts.
        #[test]
        fn conservation_under_random_committed_ops(
            ops in proptest::collection::vec((0u8..3, 0u32..6, 0u32..6, 1i64..500), 0..60)
        ) {
            let mut db = StateDB::genesis(&[z(0)], 6, 1_000);
            let initial = db.sum_balances();
            let mut minted = 0i64;
            for (i, (kind, a, b, amount)) in ops.iter().enumerate() {
                let op = match kind {
                    0 => BankOp::Transfer {
                        from: account_key(z(0), *a),
                        to: account_key(z(0), *b),
                        amount: *amount,
                    },
                    1 => BankOp::Deposit { to: account_key(z(0), *a), amount: *amount },
                    _ => BankOp::Refresh { key: account_key(z(0), *a) },
                };
                let rwset = execute_op(&db, &op).unwrap();
                prop_assert!(db.validate(&rwset));
                db.apply_writes(&rwset.writes, Version::local(z(0), 1 + i as u64, 0));
                minted += op.minted();
            }
            prop_assert_eq!(db.sum_balances(), initial + minted);
        }

        /// Validation algebra: writes to keys outside the read set never
        /// invalidate; any write to a read key always does.
        #[test]
        fn validation_sensitivity(trigger in 0u32..4, other in 4u32..8) {
            let mut db = StateDB::genesis(&[z(0)], 8, 100);
            let op = BankOp::Transfer {
                from: account_key(z(0), trigger),
                to: account_key(z(0), (trigger + 1) % 4),
                amount: 1,
            };
            let rwset = execute_op(&db, &op).unwrap();
            db.apply_writes(&[(account_key(z(0), other), 5)], Version::local(z(0), 1, 0));
            prop_assert!(db.validate(&rwset));
            db.apply_writes(&[(account_key(z(0), trigger), 5)], Version::local(z(0), 1, 1));
            prop_assert!(!db.validate(&rwset));
        }
    }

    #[test]
    fn tx_version_stamping_example() {
        // A committed local tx at block 3, offset 1 leaves both written keys
        // at that version.
        let mut db = StateDB::genesis(&[z(1)], 2, 100);
        let op = BankOp::Transfer {
            from: account_key(z(1), 0),
            to: account_key(z(1), 1),
            amount: 10,
        };
        let rwset = execute_op(&db, &op).unwrap();
        db.apply_writes(&rwset.writes, Version::local(z(1), 3, 1));
        for idx in 0..2 {
            let (_, v) = db.get(&account_key(z(1), idx)).unwrap();
            assert_eq!(v, Version::local(z(1), 3, 1));
        }
        let _ = TxId { zone: 1, client: 0, seq: 0 };
    }
}
