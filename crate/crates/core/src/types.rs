//! Core data model: identifiers, topology and quorum arithmetic, account keys,
//! MVCC versions, transactions, block headers and certificates.
//!
//! Topology shape: `Z` zones, each with one full member, `3*fL+1` local
//! members, an optional standby, and some clients. Full members of all zones
//! form the main-chain committee; local members never talk across zones.
//! Full-member certificate quorums use `qF = max(2*fF+1, ceil((Z+fF+1)/2))`,
//! which keeps any two quorums overlapping in at least `fF+1` members for
//! every committee size (and equals `2*fF+1` when `Z = 3*fF+1`).

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::codec::{Decoder, Encode};
use crate::crypto::{CryptoRegistry, Digest, SigToken};

/// Simulated clock value in microseconds.
pub type SimTime = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct ZoneId(pub u16);

impl fmt::Display for ZoneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "z{:02}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    Full,
    Local,
    Standby,
    Client,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Full => "full",
            Role::Local => "local",
            Role::Standby => "standby",
            Role::Client => "client",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct ZoneMembers {
    pub zone: ZoneId,
    pub full: NodeId,
    pub locals: Vec<NodeId>,
    pub standby: Option<NodeId>,
    pub clients: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct Topology {
    pub zones: Vec<ZoneMembers>,
    pub f_local: u32,
    pub f_full: u32,
    roles: BTreeMap<NodeId, (ZoneId, Role)>,
}

impl Topology {
    /// Allocates node ids zone by zone: full member, then `3*fL+1` locals,
    /// then the standby, then clients.
    pub fn build(
        zone_count: u16,
        f_local: u32,
        f_full: u32,
        clients_per_zone: u16,
        with_standby: bool,
    ) -> Topology {
        let mut next = 0u32;
        let mut alloc = || {
            let id = NodeId(next);
            next += 1;
            id
        };
        let mut zones = Vec::new();
        for z in 0..zone_count {
            let zone = ZoneId(z);
            let full = alloc();
            let locals: Vec<NodeId> = (0..3 * f_local + 1).map(|_| alloc()).collect();
            let standby = if with_standby { Some(alloc()) } else { None };
            let clients: Vec<NodeId> = (0..clients_per_zone).map(|_| alloc()).collect();
            zones.push(ZoneMembers { zone, full, locals, standby, clients });
        }
        let mut roles = BTreeMap::new();
        for zm in &zones {
            roles.insert(zm.full, (zm.zone, Role::Full));
            for &l in &zm.locals {
                roles.insert(l, (zm.zone, Role::Local));
            }
            if let Some(s) = zm.standby {
                roles.insert(s, (zm.zone, Role::Standby));
            }
            for &c in &zm.clients {
                roles.insert(c, (zm.zone, Role::Client));
            }
        }
        Topology { zones, f_local, f_full, roles }
    }

    pub fn zone_count(&self) -> usize {
        self.zones.len()
    }

    pub fn zone(&self, z: ZoneId) -> &ZoneMembers {
        &self.zones[z.0 as usize]
    }

    /// Full-member certificate quorum (availability + inclusion certs, DAG
    /// round advance).
    pub fn q_full(&self) -> usize {
        let z = self.zone_count();
        let f = self.f_full as usize;
        (2 * f + 1).max((z + f + 2) / 2)
    }

    /// Local-chain commit / view-change quorum over one zone's local members.
    pub fn q_local(&self) -> usize {
        2 * self.f_local as usize + 1
    }

    /// Processing-certificate quorum: `fF+1` matching proofs guarantee one
    /// honest signer.
    pub fn q_proc(&self) -> usize {
        self.f_full as usize + 1
    }

    pub fn local_members_per_zone(&self) -> usize {
        3 * self.f_local as usize + 1
    }

    /// Structural checks. Returns warnings for configurations that are safe
    /// but cannot stay live under the declared fault bound.
    pub fn validate(&self) -> crate::Result<Vec<String>> {
        let z = self.zone_count();
        if z == 0 {
            return Err(crate::Error::Config("topology needs at least one zone".into()));
        }
        for zm in &self.zones {
            if zm.locals.len() != self.local_members_per_zone() {
                return Err(crate::Error::Config(format!(
                    "zone {} has {} local members, expected {}",
                    zm.zone,
                    zm.locals.len(),
                    self.local_members_per_zone()
                )));
            }
        }
        let q = self.q_full();
        // Two quorums must overlap in fF+1 members.
        if 2 * q < z + self.f_full as usize + 1 {
            return Err(crate::Error::Config(format!(
                "full-member quorum {} over {} members breaks quorum intersection",
                q, z
            )));
        }
        let mut warnings = Vec::new();
        if z < 3 * self.f_full as usize + 1 {
            warnings.push(format!(
                "degradedLiveness: {} zones < 3*fF+1 = {}; a full-member fault can stall the main chain",
                z,
                3 * self.f_full + 1
            ));
        }
        Ok(warnings)
    }

    pub fn role_of(&self, n: NodeId) -> Option<(ZoneId, Role)> {
        self.roles.get(&n).copied()
    }

    pub fn roles(&self) -> &BTreeMap<NodeId, (ZoneId, Role)> {
        &self.roles
    }

    pub fn zone_of(&self, n: NodeId) -> ZoneId {
        self.roles[&n].0
    }

    pub fn initial_full_members(&self) -> Vec<NodeId> {
        self.zones.iter().map(|z| z.full).collect()
    }

    pub fn all_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.roles.keys().copied()
    }

    /// Coordinator for the performance (2PC) scheme: the first full member.
    pub fn coordinator(&self) -> NodeId {
        self.zones[0].full
    }
}

/// Transaction identity: submitting zone, client index within the zone, and
/// the client's sequence number. Unique and deterministic by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct TxId {
    pub zone: u16,
    pub client: u16,
    pub seq: u32,
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}.{}.{}", self.zone, self.client, self.seq)
    }
}

/// Account key, e.g. `z03/acct/000042`. The `zNN/` prefix names the owning
/// zone.
pub type Key = String;

pub fn account_key(zone: ZoneId, idx: u32) -> Key {
    format!("{}/acct/{:06}", zone, idx)
}

/// Decodes the owning zone from a key prefix. Malformed keys are a schema
/// error surfaced at classification time.
pub fn owner_zone(key: &str) -> crate::Result<ZoneId> {
    let rest = key
        .strip_prefix('z')
        .ok_or_else(|| crate::Error::Other(format!("malformed key {key:?}: missing zone prefix")))?;
    let slash = rest
        .find('/')
        .ok_or_else(|| crate::Error::Other(format!("malformed key {key:?}: missing '/'")))?;
    let digits = &rest[..slash];
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(crate::Error::Other(format!("malformed key {key:?}: bad zone digits")));
    }
    let z: u16 = digits
        .parse()
        .map_err(|_| crate::Error::Other(format!("malformed key {key:?}: zone out of range")))?;
    Ok(ZoneId(z))
}

/// Which chain stamped a version: a zone's local chain or the main chain.
/// Sync application overwrites local versions with main versions (and later
/// speculation overwrites back), so strict version growth only holds within
/// one scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum Scope {
    Local(ZoneId),
    Main,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Version {
    pub scope: Scope,
    pub block: u64,
    pub offset: u32,
}

impl Version {
    pub fn genesis(zone: ZoneId, account_idx: u32) -> Version {
        Version { scope: Scope::Local(zone), block: 0, offset: account_idx }
    }

    pub fn local(zone: ZoneId, block: u64, offset: u32) -> Version {
        Version { scope: Scope::Local(zone), block, offset }
    }

    pub fn main(block: u64, offset: u32) -> Version {
        Version { scope: Scope::Main, block, offset }
    }

    /// Strictly-later check, defined only within one scope.
    pub fn later_in_scope(&self, older: &Version) -> bool {
        self.scope == older.scope && (self.block, self.offset) > (older.block, older.offset)
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.scope {
            Scope::Local(z) => write!(f, "L{}:{}:{}", z.0, self.block, self.offset),
            Scope::Main => write!(f, "M:{}:{}", self.block, self.offset),
        }
    }
}

/// The three account operations of the banking workload. `Transfer` moves
/// funds if the source covers the amount (otherwise commits as a no-op write
/// of the unchanged balances), `Deposit` mints `amount` onto an account,
/// `Refresh` rewrites an account's balance unchanged (pure read-modify-write
/// contention).
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BankOp {
    Transfer { from: Key, to: Key, amount: i64 },
    Deposit { to: Key, amount: i64 },
    Refresh { key: Key },
}

impl BankOp {
    pub fn keys(&self) -> Vec<&Key> {
        match self {
            BankOp::Transfer { from, to, .. } => vec![from, to],
            BankOp::Deposit { to, .. } => vec![to],
            BankOp::Refresh { key } => vec![key],
        }
    }

    /// Money created by a committed instance of this op (deposits mint).
    pub fn minted(&self) -> i64 {
        match self {
            BankOp::Deposit { amount, .. } => *amount,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TxType {
    Local,
    Global,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Transaction {
    pub id: TxId,
    pub submit_zone: ZoneId,
    pub op: BankOp,
}

impl Transaction {
    /// Local iff every key is owned by the submitting zone; malformed keys
    /// are schema errors.
    pub fn classify(&self) -> crate::Result<TxType> {
        for key in self.op.keys() {
            if owner_zone(key)? != self.submit_zone {
                return Ok(TxType::Global);
            }
        }
        Ok(TxType::Local)
    }
}

/// Main-chain reference to one local block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockHeader {
    pub zone: ZoneId,
    pub number: u64,
    pub digest: Digest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CertKind {
    LocalCommit,
    Avail,
    Inclusion,
    Proc,
    ViewChange,
}

impl CertKind {
    fn tag(&self) -> u8 {
        match self {
            CertKind::LocalCommit => 1,
            CertKind::Avail => 2,
            CertKind::Inclusion => 3,
            CertKind::Proc => 4,
            CertKind::ViewChange => 5,
        }
    }
}

/// Quorum certificate: signer tokens over a subject digest. Signers are kept
/// sorted and unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub kind: CertKind,
    pub subject: Digest,
    pub signers: Vec<(NodeId, SigToken)>,
}

impl Certificate {
    pub fn new(kind: CertKind, subject: Digest, mut signers: Vec<(NodeId, SigToken)>) -> Certificate {
        signers.sort_by_key(|(n, _)| *n);
        signers.dedup_by_key(|(n, _)| *n);
        Certificate { kind, subject, signers }
    }

    /// Domain-separated digest actually signed for `subject` under `kind`.
    pub fn signing_digest(kind: CertKind, subject: &Digest) -> Digest {
        let mut buf = Vec::with_capacity(33);
        buf.push(kind.tag());
        subject.encode(&mut buf);
        Digest::of_bytes(&buf)
    }

    /// Checks quorum size, signer population membership and every token.
    pub fn verify(
        &self,
        crypto: &CryptoRegistry,
        kind: CertKind,
        subject: &Digest,
        population: &[NodeId],
        quorum: usize,
    ) -> bool {
        if self.kind != kind || self.subject != *subject {
            return false;
        }
        if self.signers.len() < quorum {
            return false;
        }
        let signed = Certificate::signing_digest(kind, subject);
        let mut seen = std::collections::BTreeSet::new();
        for (node, token) in &self.signers {
            if !population.contains(node) || !seen.insert(*node) {
                return false;
            }
            if !crypto.verify(*node, &signed, token) {
                return false;
            }
        }
        true
    }

    pub fn signer_ids(&self) -> Vec<NodeId> {
        self.signers.iter().map(|(n, _)| *n).collect()
    }
}

/// Which sharding scheme a run exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Scheme {
    /// Local chains + DAG-mempool main chain: balanced between the two
    /// extremes below (the system under study).
    Balanced,
    /// Full replication: every zone's blocks are forwarded onward so all
    /// members everywhere store every shard.
    Availability,
    /// Independent zone chains, no main chain; cross-zone txs go through a
    /// coordinator-driven 2PC.
    Performance,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scheme::Balanced => "balanced",
            Scheme::Availability => "availability",
            Scheme::Performance => "performance",
        };
        f.write_str(s)
    }
}

/// Protocol tunables, all times in microseconds. Defaults follow the
/// evaluation setup; see `config` for the TOML surface.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ProtocolParams {
    pub batch_size: u32,
    pub batch_timeout_us: u64,
    pub max_digests_per_vertex: u32,
    pub max_vertex_delay_us: u64,
    pub delta_sync_us: u64,
    pub delta_gst_us: u64,
    pub c_validate_us: u64,
    pub c_execute_us: u64,
    /// Main-chain scheduling of global transactions (extract + MVCC validate
    /// + sequential execute). Off = order-only DAG baseline: globals execute
    /// in commit order with no local validation, locals commit as-is.
    pub scheduling: bool,
    pub tx_size_bytes: u64,
    pub local_block_size_bytes: u64,
    pub twopc_timeout_us: u64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        let tx_size_bytes = 2890;
        let local_block_size_bytes = 1_400_000;
        ProtocolParams {
            batch_size: (local_block_size_bytes / tx_size_bytes) as u32,
            batch_timeout_us: 500_000,
            max_digests_per_vertex: 40,
            max_vertex_delay_us: 800_000,
            delta_sync_us: 100_000,
            delta_gst_us: 2_000_000,
            c_validate_us: 30,
            c_execute_us: 60,
            scheduling: true,
            tx_size_bytes,
            local_block_size_bytes,
            twopc_timeout_us: 2_000_000,
        }
    }
}

impl ProtocolParams {
    /// Availability-audit budget: replication + certificate + notification.
    pub fn delta_avail_us(&self) -> u64 {
        3 * self.delta_sync_us
    }

    /// Processing-audit budget from availability notification to processing
    /// certificate: inclusion + consensus + proof exchange.
    pub fn delta_proc_us(&self) -> u64 {
        6 * self.delta_sync_us
    }

    /// Processing cost of a main block: MVCC validation of local txs
    /// (parallel across zones when scheduling is on, so the max zone counts;
    /// serial otherwise) plus sequential execution of globals.
    pub fn processing_cost_us(&self, local_tx_per_zone: &BTreeMap<ZoneId, u64>, global_txs: u64) -> u64 {
        let validate = if self.scheduling {
            local_tx_per_zone.values().copied().max().unwrap_or(0)
        } else {
            local_tx_per_zone.values().copied().sum()
        };
        self.c_validate_us * validate + self.c_execute_us * global_txs
    }
}

/// Shared handle used for block payloads in messages so that fan-out to many
/// receivers does not copy transaction bodies.
pub type Shared<T> = Arc<T>;

// ---------------------------------------------------------------------------
// Canonical encoding
// ---------------------------------------------------------------------------

impl Encode for ZoneId {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
    }
}

impl Encode for NodeId {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
    }
}

impl Encode for TxId {
    fn encode(&self, out: &mut Vec<u8>) {
        self.zone.encode(out);
        self.client.encode(out);
        self.seq.encode(out);
    }
}

impl Encode for Scope {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Scope::Local(z) => {
                out.push(0);
                z.encode(out);
            }
            Scope::Main => {
                out.push(1);
                ZoneId(0).encode(out);
            }
        }
    }
}

impl Encode for Version {
    fn encode(&self, out: &mut Vec<u8>) {
        self.scope.encode(out);
        self.block.encode(out);
        self.offset.encode(out);
    }
}

impl Encode for BankOp {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            BankOp::Transfer { from, to, amount } => {
                out.push(0);
                from.encode(out);
                to.encode(out);
                amount.encode(out);
            }
            BankOp::Deposit { to, amount } => {
                out.push(1);
                to.encode(out);
                amount.encode(out);
            }
            BankOp::Refresh { key } => {
                out.push(2);
                key.encode(out);
            }
        }
    }
}

impl Encode for Transaction {
    fn encode(&self, out: &mut Vec<u8>) {
        self.id.encode(out);
        self.submit_zone.encode(out);
        self.op.encode(out);
    }
}

impl Encode for BlockHeader {
    fn encode(&self, out: &mut Vec<u8>) {
        self.zone.encode(out);
        self.number.encode(out);
        self.digest.encode(out);
    }
}

impl Encode for Certificate {
    fn encode(&self, out: &mut Vec<u8>) {
        out.push(self.kind.tag());
        self.subject.encode(out);
        self.signers.encode(out);
    }
}

impl Version {
    pub fn decode(d: &mut Decoder) -> crate::Result<Version> {
        let scope = match d.u8()? {
            0 => Scope::Local(ZoneId(d.u16()?)),
            1 => {
                d.u16()?;
                Scope::Main
            }
            t => return Err(crate::Error::Other(format!("bad scope tag {t}"))),
        };
        Ok(Version { scope, block: d.u64()?, offset: d.u32()? })
    }
}
