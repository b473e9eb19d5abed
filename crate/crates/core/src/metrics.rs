//! Outcome accounting and the machine-readable run report.
//!
//! Every submitted transaction ends in exactly one of three states —
//! committed, aborted, or rejected — and the ledger enforces that closure:
//! the first recorded outcome wins, later reports of the same transaction are
//! ignored, and a run whose counts do not satisfy
//! `submitted = committed + aborted + rejected` fails its consistency check.
//! Latency is measured from the submission event to the first commit event.
//!
//! Reports contain integers only (microseconds, bytes, counts, per-mille
//! ratios) and serialize to line-delimited JSON records with every map in key
//! order, so the same run produces byte-identical report files every time.
//! Two reports can be compared only when they carry the same workload digest
//! — the fingerprint of the submitted transaction stream — which restricts
//! comparisons to runs that differ in scheme or flags, not in workload.

use crate::crypto::Digest;
use crate::processing::InterferenceKind;
use crate::types::{TxId, TxType};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Committed,
    Aborted,
    Rejected,
}

#[derive(Debug, Clone)]
struct OutcomeRecord {
    outcome: Outcome,
    at: u64,
    interference: Option<InterferenceKind>,
}

/// First-wins ledger of submissions and outcomes.
#[derive(Debug, Default)]
pub struct OutcomeLedger {
    submits: BTreeMap<TxId, (u64, TxType)>,
    submit_order: Vec<(u64, TxId)>,
    outcomes: BTreeMap<TxId, OutcomeRecord>,
}

impl OutcomeLedger {
    pub fn record_submit(&mut self, id: TxId, at: u64, ty: TxType) {
        if self.submits.insert(id, (at, ty)).is_none() {
            self.submit_order.push((at, id));
        }
    }

    pub fn record(&mut self, id: TxId, outcome: Outcome, at: u64) -> bool {
        self.record_with(id, outcome, at, None)
    }

    pub fn record_with(
        &mut self,
        id: TxId,
        outcome: Outcome,
        at: u64,
        interference: Option<InterferenceKind>,
    ) -> bool {
        if self.outcomes.contains_key(&id) {
            return false;
        }
        self.outcomes.insert(id, OutcomeRecord { outcome, at, interference });
        true
    }

    pub fn submitted(&self) -> u64 {
        self.submits.len() as u64
    }

    pub fn outcome_of(&self, id: &TxId) -> Option<Outcome> {
        self.outcomes.get(id).map(|r| r.outcome)
    }

    pub fn submit_time(&self, id: &TxId) -> Option<u64> {
        self.submits.get(id).map(|(t, _)| *t)
    }

    /// Transactions submitted but still without an outcome (the run-end hooks
    /// are expected to reject these explicitly).
    pub fn undecided(&self) -> Vec<TxId> {
        self.submits.keys().filter(|id| !self.outcomes.contains_key(id)).copied().collect()
    }

    /// True when every submitted transaction has an outcome (quiescence gate
    /// for main-chain round production).
    pub fn all_decided(&self) -> bool {
        self.submits.keys().all(|id| self.outcomes.contains_key(id))
    }

    pub fn count(&self, outcome: Outcome) -> u64 {
        self.outcomes.values().filter(|r| r.outcome == outcome).count() as u64
    }

    pub fn count_by_type(&self, outcome: Outcome, ty: TxType) -> u64 {
        self.outcomes
            .iter()
            .filter(|(id, r)| {
                r.outcome == outcome && self.submits.get(id).map(|(_, t)| *t) == Some(ty)
            })
            .count() as u64
    }

    pub fn interference_count(&self, kind: InterferenceKind) -> u64 {
        self.outcomes.values().filter(|r| r.interference == Some(kind)).count() as u64
    }

    /// Sorted commit latencies (commit time minus submit time).
    pub fn latencies(&self) -> Vec<u64> {
        let mut out: Vec<u64> = self
            .outcomes
            .iter()
            .filter(|(_, r)| r.outcome == Outcome::Committed)
            .filter_map(|(id, r)| {
                self.submits.get(id).map(|(t, _)| r.at.saturating_sub(*t))
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Fingerprint of the submitted stream: submission times and ids in
    /// order. Two runs over the same workload share this digest.
    pub fn workload_digest(&self) -> Digest {
        Digest::of(&self.submit_order.iter().map(|(t, id)| (*t, *id)).collect::<Vec<_>>())
    }

    /// Accounting-closure and sanity violations; empty means clean.
    pub fn closure_violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for id in self.undecided() {
            v.push(format!("{id} submitted but has no outcome"));
        }
        for (id, r) in &self.outcomes {
            match self.submits.get(id) {
                None => v.push(format!("{id} has an outcome but was never submitted")),
                Some((t, _)) if r.at < *t => {
                    v.push(format!("{id} outcome at {} precedes submission at {}", r.at, t))
                }
                _ => {}
            }
        }
        v
    }
}

/// Nearest-rank percentile over a sorted slice.
pub fn percentile(sorted: &[u64], pct: u64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (sorted.len() as u64 * pct).div_ceil(100).max(1);
    sorted[(rank - 1) as usize]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scheme: String,
    pub scheduling: bool,
    pub seed: u64,
    pub zones: u16,
    pub global_per_mille: u32,
    pub workload_digest: String,
    pub duration_us: u64,
    pub submitted: u64,
    pub committed: u64,
    pub aborted: u64,
    pub rejected: u64,
    pub committed_local: u64,
    pub committed_global: u64,
    pub aborted_local: u64,
    pub aborted_global: u64,
    pub interference_same_block: u64,
    pub interference_cross_block: u64,
    pub throughput_tx_per_sec: u64,
    pub latency_mean_us: u64,
    pub latency_p50_us: u64,
    pub latency_p95_us: u64,
    pub latency_p99_us: u64,
    pub bytes_total: u64,
    pub bytes_per_class: BTreeMap<String, u64>,
    pub bytes_per_link: BTreeMap<String, u64>,
    pub storage_per_member: BTreeMap<String, u64>,
    pub audit_faults: u64,
    pub view_changes: u64,
    pub violations: u64,
    pub state_digest: String,
}

impl MetricsReport {
    /// Local abort fraction in per-mille of decided local transactions.
    pub fn abort_ratio_per_mille(&self) -> u64 {
        let attempted = self.committed_local + self.aborted_local;
        if attempted == 0 {
            0
        } else {
            self.aborted_local * 1000 / attempted
        }
    }

    pub fn storage_total(&self) -> u64 {
        self.storage_per_member.values().sum()
    }

    /// Line-delimited records: one summary line, then one line per link and
    /// per member, all in key order — byte-identical across reruns.
    pub fn to_jsonl(&self) -> String {
        let mut lines = Vec::new();
        let mut summary = self.clone();
        let links = std::mem::take(&mut summary.bytes_per_link);
        let storage = std::mem::take(&mut summary.storage_per_member);
        lines.push(format!(
            "{{\"record\":\"summary\",\"body\":{}}}",
            serde_json::to_string(&summary).unwrap()
        ));
        for (link, bytes) in &links {
            lines.push(format!("{{\"record\":\"link\",\"link\":{:?},\"bytes\":{}}}", link, bytes));
        }
        for (member, bytes) in &storage {
            lines.push(format!(
                "{{\"record\":\"storage\",\"member\":{:?},\"bytes\":{}}}",
                member, bytes
            ));
        }
        lines.join("\n") + "\n"
    }

    pub fn from_jsonl(text: &str) -> crate::Result<MetricsReport> {
        let mut report: Option<MetricsReport> = None;
        let mut links = BTreeMap::new();
        let mut storage = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let v: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| crate::Error::Other(format!("bad report line: {e}")))?;
            match v.get("record").and_then(|r| r.as_str()) {
                Some("summary") => {
                    let body = v.get("body").ok_or_else(|| {
                        crate::Error::Other("summary record without body".into())
                    })?;
                    report = Some(serde_json::from_value(body.clone()).map_err(|e| {
                        crate::Error::Other(format!("bad summary record: {e}"))
                    })?);
                }
                Some("link") => {
                    let link = v["link"].as_str().unwrap_or_default().to_string();
                    links.insert(link, v["bytes"].as_u64().unwrap_or(0));
                }
                Some("storage") => {
                    let member = v["member"].as_str().unwrap_or_default().to_string();
                    storage.insert(member, v["bytes"].as_u64().unwrap_or(0));
                }
                _ => return Err(crate::Error::Other(format!("unknown record: {line}"))),
            }
        }
        let mut report =
            report.ok_or_else(|| crate::Error::Other("report has no summary record".into()))?;
        report.bytes_per_link = links;
        report.storage_per_member = storage;
        Ok(report)
    }

    /// Short human-readable summary.
    pub fn human_summary(&self) -> String {
        format!(
            "scheme={} scheduling={} zones={} global={}%o seed={}\n\
             submitted={} committed={} aborted={} rejected={}\n\
             throughput={} tx/s  latency mean/p50/p95/p99 = {}/{}/{}/{} us\n\
             local aborts={}%o (same-block={} cross-block={})\n\
             bytes={}  storage={}  audit faults={} view changes={} violations={}",
            self.scheme,
            self.scheduling,
            self.zones,
            self.global_per_mille,
            self.seed,
            self.submitted,
            self.committed,
            self.aborted,
            self.rejected,
            self.throughput_tx_per_sec,
            self.latency_mean_us,
            self.latency_p50_us,
            self.latency_p95_us,
            self.latency_p99_us,
            self.abort_ratio_per_mille(),
            self.interference_same_block,
            self.interference_cross_block,
            self.bytes_total,
            self.storage_total(),
            self.audit_faults,
            self.view_changes,
            self.violations,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRow {
    pub metric: String,
    pub a: u64,
    pub b: u64,
    /// `b` as per-mille of `a` (1000 = equal); 0 when `a` is zero and `b` is
    /// not.
    pub ratio_per_mille: u64,
    pub direction: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub workload_digest: String,
    pub a_scheme: String,
    pub b_scheme: String,
    pub rows: Vec<CompareRow>,
}

impl ComparisonSummary {
    pub fn human_summary(&self) -> String {
        let mut out = format!(
            "comparing b=[{}] against a=[{}] on workload {}\n",
            self.b_scheme, self.a_scheme, &self.workload_digest[..12.min(self.workload_digest.len())]
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<24} a={:<12} b={:<12} b/a={}.{:03} ({})\n",
                r.metric,
                r.a,
                r.b,
                r.ratio_per_mille / 1000,
                r.ratio_per_mille % 1000,
                r.direction
            ));
        }
        out
    }
}

fn row(metric: &str, a: u64, b: u64) -> CompareRow {
    let ratio = if a == 0 {
        if b == 0 {
            1000
        } else {
            0
        }
    } else {
        b * 1000 / a
    };
    let direction = match b.cmp(&a) {
        std::cmp::Ordering::Less => "lower",
        std::cmp::Ordering::Equal => "equal",
        std::cmp::Ordering::Greater => "higher",
    };
    CompareRow { metric: metric.into(), a, b, ratio_per_mille: ratio, direction: direction.into() }
}

/// Ratio table over two reports of the same workload; refuses reports whose
/// submitted streams differ.
pub fn report_compare(a: &MetricsReport, b: &MetricsReport) -> crate::Result<ComparisonSummary> {
    if a.workload_digest != b.workload_digest {
        return Err(crate::Error::Other(format!(
            "reports cover different workloads ({} vs {})",
            a.workload_digest, b.workload_digest
        )));
    }
    let label = |r: &MetricsReport| {
        format!("{} scheduling={} seed={}", r.scheme, r.scheduling, r.seed)
    };
    Ok(ComparisonSummary {
        workload_digest: a.workload_digest.clone(),
        a_scheme: label(a),
        b_scheme: label(b),
        rows: vec![
            row("throughput_tx_per_sec", a.throughput_tx_per_sec, b.throughput_tx_per_sec),
            row("committed", a.committed, b.committed),
            row("abort_ratio_per_mille", a.abort_ratio_per_mille(), b.abort_ratio_per_mille()),
            row("latency_mean_us", a.latency_mean_us, b.latency_mean_us),
            row("bytes_total", a.bytes_total, b.bytes_total),
            row("storage_total", a.storage_total(), b.storage_total()),
        ],
    })
}
