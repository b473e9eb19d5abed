//! Anchor-based total ordering over the certified DAG, in the Bullshark
//! style: every even round has a designated anchor slot, rotating
//! round-robin over zones. An anchor commits *directly* once enough
//! certified next-round vertices reference it as a parent — enough meaning
//! `max(fF+1, Z − q_full + 1)` so that every future vertex's parent quorum
//! must intersect the supporters, which makes the anchor reachable from the
//! entire DAG suffix. When an anchor commits directly, earlier uncommitted
//! anchors are revisited backwards: reachable ones commit retroactively (in
//! round order), unreachable ones are skipped forever. Every member runs
//! this rule on its own view; because certificates are objective and
//! reachability is a property of the (converging) DAG, all members emit the
//! identical batch sequence.
//!
//! Each committed anchor yields an ordered batch: a depth-first post-order
//! walk of the anchor's not-yet-ordered causal history (parents before
//! vertex, ties by round then creator), flattened into the blocks'
//! (zone, number, digest) sequence. Numbers already ordered are dropped —
//! safe because the vote rules pin each (zone, number) to one digest.

use std::collections::BTreeSet;

use crate::codec::Encode;
use crate::crypto::Digest;
use crate::dag::DagView;
use crate::types::{Shared, Topology, ZoneId};

#[derive(Debug, Clone)]
pub struct OrderedBatch {
    pub k: u64,
    pub anchor_round: u64,
    pub anchor: Digest,
    /// Committed vertices in final order (parents before vertex).
    pub vertices: Vec<Shared<crate::dag::Vertex>>,
    /// Flattened block sequence τ for main block k.
    pub blocks: Vec<(ZoneId, u64, Digest)>,
}

/// Portable commit-state copy for recovery snapshots.
#[derive(Debug, Clone, Default)]
pub struct CommitSnapshot {
    pub next_anchor_round: u64,
    pub next_k: u64,
    pub ordered: Vec<Digest>,
    pub included: Vec<(ZoneId, u64)>,
}

impl Encode for CommitSnapshot {
    fn encode(&self, out: &mut Vec<u8>) {
        self.next_anchor_round.encode(out);
        self.next_k.encode(out);
        self.ordered.encode(out);
        self.included.to_vec().encode(out);
    }
}

pub struct CommitState {
    zone_count: u64,
    f_full: usize,
    q_full: usize,
    next_anchor_round: u64,
    next_k: u64,
    ordered: BTreeSet<Digest>,
    included: BTreeSet<(ZoneId, u64)>,
    complete_cache: BTreeSet<Digest>,
}

impl CommitState {
    pub fn new(topo: &Topology) -> CommitState {
        CommitState {
            zone_count: topo.zone_count() as u64,
            f_full: topo.f_full as usize,
            q_full: topo.q_full(),
            next_anchor_round: 2,
            next_k: 1,
            ordered: BTreeSet::new(),
            included: BTreeSet::new(),
            complete_cache: BTreeSet::new(),
        }
    }

    /// Zone owning the anchor slot of an (even) round.
    pub fn anchor_zone(&self, round: u64) -> ZoneId {
        ZoneId(((round / 2 - 1) % self.zone_count) as u16)
    }

    /// Supporters needed for a direct commit.
    pub fn support_threshold(&self) -> usize {
        (self.f_full + 1).max(self.zone_count as usize - self.q_full + 1)
    }

    /// Runs the commit rule to exhaustion against the current view.
    pub fn try_commit(&mut self, dag: &DagView) -> Vec<OrderedBatch> {
        let mut out = Vec::new();
        loop {
            let highest = dag.highest_certified_round();
            let mut direct = None;
            let mut r = self.next_anchor_round;
            while r + 1 <= highest {
                if let Some(anchor) = dag.certified_digest(r, self.anchor_zone(r)) {
                    if self.direct_support(dag, &anchor, r) >= self.support_threshold() {
                        if !self.ancestry_complete(dag, anchor) {
                            // Missing ancestors are being fetched; committing
                            // later anchors first would reorder history.
                            return out;
                        }
                        direct = Some((r, anchor));
                        break;
                    }
                }
                r += 2;
            }
            let Some((r_star, a_star)) = direct else { return out };
            let mut chain = vec![(r_star, a_star)];
            let mut current = a_star;
            let mut rr = r_star;
            while rr > self.next_anchor_round {
                rr -= 2;
                if let Some(anchor) = dag.certified_digest(rr, self.anchor_zone(rr)) {
                    if Self::reachable(dag, &current, &anchor) {
                        chain.push((rr, anchor));
                        current = anchor;
                    }
                }
            }
            chain.reverse();
            for (anchor_round, anchor) in chain {
                out.push(self.order_from(dag, anchor_round, anchor));
            }
            self.next_anchor_round = r_star + 2;
        }
    }

    fn direct_support(&self, dag: &DagView, anchor: &Digest, round: u64) -> usize {
        dag.certified_at(round + 1)
            .filter(|(_, d)| {
                dag.vertex(d)
                    .is_some_and(|v| v.parent_subjects().any(|p| p == *anchor))
            })
            .count()
    }

    fn ancestry_complete(&mut self, dag: &DagView, from: Digest) -> bool {
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(d) = stack.pop() {
            if self.complete_cache.contains(&d) || !seen.insert(d) {
                continue;
            }
            let Some(v) = dag.vertex(&d) else { return false };
            stack.extend(v.parent_subjects());
        }
        self.complete_cache.extend(seen);
        true
    }

    fn reachable(dag: &DagView, from: &Digest, target: &Digest) -> bool {
        let target_round = match dag.vertex(target) {
            Some(v) => v.round,
            None => return false,
        };
        let mut stack = vec![*from];
        let mut seen = BTreeSet::new();
        while let Some(d) = stack.pop() {
            if d == *target {
                return true;
            }
            if !seen.insert(d) {
                continue;
            }
            if let Some(v) = dag.vertex(&d) {
                if v.round > target_round {
                    stack.extend(v.parent_subjects());
                }
            }
        }
        false
    }

    fn order_from(&mut self, dag: &DagView, anchor_round: u64, anchor: Digest) -> OrderedBatch {
        enum Frame {
            Enter(Digest),
            Exit(Digest),
        }
        let mut order = Vec::new();
        let mut visiting = BTreeSet::new();
        let mut stack = vec![Frame::Enter(anchor)];
        while let Some(frame) = stack.pop() {
            match frame {
                Frame::Enter(d) => {
                    if self.ordered.contains(&d) || !visiting.insert(d) {
                        continue;
                    }
                    stack.push(Frame::Exit(d));
                    let vertex = dag.vertex(&d).expect("complete ancestry");
                    let mut parents: Vec<Digest> = vertex.parent_subjects().collect();
                    parents.sort_by_key(|p| {
                        let pv = dag.vertex(p).expect("complete ancestry");
                        (pv.round, pv.creator)
                    });
                    for p in parents.into_iter().rev() {
                        stack.push(Frame::Enter(p));
                    }
                }
                Frame::Exit(d) => {
                    self.ordered.insert(d);
                    order.push(d);
                }
            }
        }
        let mut blocks = Vec::new();
        let mut vertices = Vec::new();
        for d in &order {
            let vertex = dag.vertex(d).unwrap().clone();
            for &(n, bd) in &vertex.digests {
                if self.included.insert((vertex.zone, n)) {
                    blocks.push((vertex.zone, n, bd));
                }
            }
            vertices.push(vertex);
        }
        let k = self.next_k;
        self.next_k += 1;
        OrderedBatch { k, anchor_round, anchor, vertices, blocks }
    }

    pub fn next_k(&self) -> u64 {
        self.next_k
    }

    pub fn export(&self) -> CommitSnapshot {
        CommitSnapshot {
            next_anchor_round: self.next_anchor_round,
            next_k: self.next_k,
            ordered: self.ordered.iter().copied().collect(),
            included: self.included.iter().copied().collect(),
        }
    }

    pub fn restore(topo: &Topology, snapshot: CommitSnapshot) -> CommitState {
        CommitState {
            zone_count: topo.zone_count() as u64,
            f_full: topo.f_full as usize,
            q_full: topo.q_full(),
            next_anchor_round: snapshot.next_anchor_round,
            next_k: snapshot.next_k,
            ordered: snapshot.ordered.into_iter().collect(),
            included: snapshot.included.into_iter().collect(),
            complete_cache: BTreeSet::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::CryptoRegistry;
    use crate::dag::Vertex;
    use crate::types::{Certificate, CertKind, NodeId};

    fn block_digest(zone: ZoneId, n: u64) -> Digest {
        let mut buf = Vec::new();
        "test-block".encode(&mut buf);
        zone.encode(&mut buf);
        n.encode(&mut buf);
        Digest::of_bytes(&buf)
    }

    /// Hand-built DAG: vertices addressed as (round, zone index); parents
    /// listed per vertex. All vertices carry one block (number == round).
    struct TestDag {
        topo: Topology,
        crypto: CryptoRegistry,
        fulls: Vec<NodeId>,
        dag: DagView,
        by_label: std::collections::BTreeMap<(u64, u16), Digest>,
        next_number: std::collections::BTreeMap<u16, u64>,
    }

    impl TestDag {
        fn new(zones: u16) -> TestDag {
            let topo = Topology::build(zones, 1, 1, 0, false);
            let fulls = topo.initial_full_members();
            TestDag {
                topo,
                crypto: CryptoRegistry::new(),
                fulls,
                dag: DagView::new(NodeId(10_000)),
                by_label: Default::default(),
                next_number: Default::default(),
            }
        }

        /// Adds a certified vertex for (round, zone) with one block digest
        /// (the zone's next consecutive number) and the given parents.
        fn add(&mut self, round: u64, zone: u16, parents: &[(u64, u16)]) -> Digest {
            let number = *self.next_number.entry(zone).or_insert(1);
            self.next_number.insert(zone, number + 1);
            let mut parent_certs: Vec<Certificate> = parents
                .iter()
                .map(|label| {
                    let d = self.by_label[label];
                    self.dag.cert(&d).unwrap().clone()
                })
                .collect();
            parent_certs.sort_by(|a, b| a.subject.0.cmp(&b.subject.0));
            let vertex = Shared::new(Vertex {
                creator: self.fulls[zone as usize],
                zone: ZoneId(zone),
                round,
                digests: vec![(number, block_digest(ZoneId(zone), number))],
                parents: parent_certs,
            });
            let digest = vertex.structural_digest();
            self.dag.store_vertex(vertex);
            let signed = Certificate::signing_digest(CertKind::Inclusion, &digest);
            let signers: Vec<_> =
                self.fulls.iter().map(|&f| (f, self.crypto.sign(f, &signed))).collect();
            let cert = Certificate::new(CertKind::Inclusion, digest, signers);
            assert_eq!(
                self.dag.add_cert(cert, &self.crypto, &self.fulls, self.topo.q_full()),
                crate::dag::CertOutcome::Added
            );
            self.by_label.insert((round, zone), digest);
            digest
        }

        fn commit_state(&self) -> CommitState {
            CommitState::new(&self.topo)
        }
    }

    /// Full 4-zone lattice for rounds 1..=5 with one zone left out of each
    /// parent set (round 1 full).
    fn lattice() -> TestDag {
        let mut t = TestDag::new(4);
        for z in 0..4 {
            t.add(1, z, &[]);
        }
        t.add(2, 0, &[(1, 0), (1, 1), (1, 2)]);
        t.add(2, 1, &[(1, 1), (1, 2), (1, 3)]);
        t.add(2, 2, &[(1, 0), (1, 2), (1, 3)]);
        t.add(2, 3, &[(1, 0), (1, 1), (1, 3)]);
        t.add(3, 0, &[(2, 0), (2, 1), (2, 2)]);
        t.add(3, 1, &[(2, 1), (2, 2), (2, 3)]);
        t.add(3, 2, &[(2, 0), (2, 2), (2, 3)]);
        t.add(3, 3, &[(2, 1), (2, 2), (2, 3)]);
        t.add(4, 0, &[(3, 0), (3, 1), (3, 2)]);
        t.add(4, 1, &[(3, 0), (3, 1), (3, 3)]);
        t.add(4, 2, &[(3, 1), (3, 2), (3, 3)]);
        t.add(4, 3, &[(3, 0), (3, 2), (3, 3)]);
        t.add(5, 0, &[(4, 0), (4, 1), (4, 2)]);
        t.add(5, 1, &[(4, 0), (4, 1), (4, 3)]);
        t.add(5, 2, &[(4, 1), (4, 2), (4, 3)]);
        t.add(5, 3, &[(4, 0), (4, 2), (4, 3)]);
        t
    }

    fn tau(batch: &OrderedBatch) -> Vec<(u16, u64)> {
        batch.blocks.iter().map(|&(z, n, _)| (z.0, n)).collect()
    }

    #[test]
    fn anchors_commit_in_hand_computed_order() {
        let t = lattice();
        let mut state = t.commit_state();
        let batches = state.try_commit(&t.dag);
        assert_eq!(batches.len(), 2);

        // Anchor of round 2 is zone 0's vertex; its history is the three
        // round-1 parents, ordered by creator.
        let b1 = &batches[0];
        assert_eq!((b1.k, b1.anchor_round), (1, 2));
        assert_eq!(b1.anchor, t.by_label[&(2, 0)]);
        assert_eq!(tau(b1), vec![(0, 1), (1, 1), (2, 1), (0, 2)]);

        // Anchor of round 4 is zone 1's vertex; depth-first post-order over
        // the remaining history, parents before vertex, ties by creator.
        let b2 = &batches[1];
        assert_eq!((b2.k, b2.anchor_round), (2, 4));
        assert_eq!(b2.anchor, t.by_label[&(4, 1)]);
        let expected_vertices = [
            (1, 3),
            (2, 1),
            (2, 2),
            (3, 0),
            (2, 3),
            (3, 1),
            (3, 3),
            (4, 1),
        ];
        let got: Vec<Digest> =
            b2.vertices.iter().map(|v| v.structural_digest()).collect();
        let want: Vec<Digest> = expected_vertices
            .iter()
            .map(|&(r, z)| t.by_label[&(r, z)])
            .collect();
        assert_eq!(got, want);
        assert_eq!(
            tau(b2),
            vec![(3, 1), (1, 2), (2, 2), (0, 3), (3, 2), (1, 3), (3, 3), (1, 4)]
        );

        // Nothing commits twice.
        let all: Vec<(u16, u64)> = batches.iter().flat_map(|b| tau(b)).collect();
        let dedup: BTreeSet<(u16, u64)> = all.iter().copied().collect();
        assert_eq!(all.len(), dedup.len());
    }

    #[test]
    fn commit_sequence_is_identical_across_incremental_and_batch_views() {
        // One state sees the DAG all at once, the other round by round.
        let t = lattice();
        let mut all_at_once = t.commit_state();
        let batches_a = all_at_once.try_commit(&t.dag);

        let mut incremental = t.commit_state();
        let mut t2 = TestDag::new(4);
        let mut batches_b = Vec::new();
        for z in 0..4 {
            t2.add(1, z, &[]);
        }
        batches_b.extend(incremental.try_commit(&t2.dag));
        t2.add(2, 0, &[(1, 0), (1, 1), (1, 2)]);
        t2.add(2, 1, &[(1, 1), (1, 2), (1, 3)]);
        t2.add(2, 2, &[(1, 0), (1, 2), (1, 3)]);
        t2.add(2, 3, &[(1, 0), (1, 1), (1, 3)]);
        batches_b.extend(incremental.try_commit(&t2.dag));
        t2.add(3, 0, &[(2, 0), (2, 1), (2, 2)]);
        t2.add(3, 1, &[(2, 1), (2, 2), (2, 3)]);
        t2.add(3, 2, &[(2, 0), (2, 2), (2, 3)]);
        t2.add(3, 3, &[(2, 1), (2, 2), (2, 3)]);
        batches_b.extend(incremental.try_commit(&t2.dag));
        t2.add(4, 0, &[(3, 0), (3, 1), (3, 2)]);
        t2.add(4, 1, &[(3, 0), (3, 1), (3, 3)]);
        t2.add(4, 2, &[(3, 1), (3, 2), (3, 3)]);
        t2.add(4, 3, &[(3, 0), (3, 2), (3, 3)]);
        batches_b.extend(incremental.try_commit(&t2.dag));
        t2.add(5, 0, &[(4, 0), (4, 1), (4, 2)]);
        t2.add(5, 1, &[(4, 0), (4, 1), (4, 3)]);
        t2.add(5, 2, &[(4, 1), (4, 2), (4, 3)]);
        t2.add(5, 3, &[(4, 0), (4, 2), (4, 3)]);
        batches_b.extend(incremental.try_commit(&t2.dag));

        assert_eq!(batches_a.len(), batches_b.len());
        for (a, b) in batches_a.iter().zip(&batches_b) {
            assert_eq!(a.k, b.k);
            assert_eq!(a.anchor, b.anchor);
            assert_eq!(a.blocks, b.blocks);
        }
    }

    #[test]
    fn unreachable_anchor_is_skipped_forever() {
        // Zone 0 goes silent after round 1: the round-2 anchor slot stays
        // empty, rounds proceed on three zones, and the round-4 anchor
        // commits with the round-2 slot skipped.
        let mut t = TestDag::new(4);
        for z in 0..4 {
            t.add(1, z, &[]);
        }
        for r in 2..=5 {
            for z in 1..4 {
                let parents: Vec<(u64, u16)> =
                    (1..4).map(|pz| (r - 1, pz)).filter(|&(pr, _)| pr >= 1).collect();
                let parents = if r == 2 {
                    vec![(1, 0), (1, 1), (1, 2), (1, 3)]
                } else {
                    parents
                };
                t.add(r, z, &parents);
            }
        }
        let mut state = t.commit_state();
        let batches = state.try_commit(&t.dag);
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].anchor_round, 4);
        assert_eq!(batches[0].anchor, t.by_label[&(4, 1)]);
        // Zone 0's only block (round 1) still enters through reachability.
        assert!(tau(&batches[0]).contains(&(0, 1)));
        assert!(!tau(&batches[0]).iter().any(|&(z, n)| z == 0 && n > 1));
    }

    #[test]
    fn weakly_supported_anchor_commits_retroactively() {
        let mut t = TestDag::new(4);
        for z in 0..4 {
            t.add(1, z, &[]);
        }
        t.add(2, 0, &[(1, 0), (1, 1), (1, 2)]);
        t.add(2, 1, &[(1, 1), (1, 2), (1, 3)]);
        t.add(2, 2, &[(1, 0), (1, 2), (1, 3)]);
        t.add(2, 3, &[(1, 0), (1, 1), (1, 3)]);
        // Only zone 2's round-3 vertex references the round-2 anchor (zone
        // 0): support 1 < 2, no direct commit.
        t.add(3, 0, &[(2, 1), (2, 2), (2, 3)]);
        t.add(3, 1, &[(2, 1), (2, 2), (2, 3)]);
        t.add(3, 2, &[(2, 0), (2, 1), (2, 2)]);
        t.add(3, 3, &[(2, 1), (2, 2), (2, 3)]);
        let mut state = t.commit_state();
        assert!(state.try_commit(&t.dag).is_empty());
        // Round-4 anchor (zone 1) reaches the weak anchor via zone 2's
        // vertex; once round 5 supports it, both commit, oldest first.
        t.add(4, 0, &[(3, 0), (3, 1), (3, 2)]);
        t.add(4, 1, &[(3, 0), (3, 1), (3, 2)]);
        t.add(4, 2, &[(3, 1), (3, 2), (3, 3)]);
        t.add(4, 3, &[(3, 0), (3, 2), (3, 3)]);
        t.add(5, 0, &[(4, 0), (4, 1), (4, 2)]);
        t.add(5, 1, &[(4, 0), (4, 1), (4, 3)]);
        t.add(5, 2, &[(4, 1), (4, 2), (4, 3)]);
        t.add(5, 3, &[(4, 0), (4, 2), (4, 3)]);
        let batches = state.try_commit(&t.dag);
        assert_eq!(batches.len(), 2);
        assert_eq!(batches[0].anchor_round, 2);
        assert_eq!(batches[0].anchor, t.by_label[&(2, 0)]);
        assert_eq!(batches[1].anchor_round, 4);
        assert_eq!(batches[1].anchor, t.by_label[&(4, 1)]);
    }

    #[test]
    fn support_threshold_generalizes_with_topology() {
        let t4 = CommitState::new(&Topology::build(4, 1, 1, 0, false));
        assert_eq!(t4.support_threshold(), 2);
        let t6 = CommitState::new(&Topology::build(6, 1, 1, 0, false));
        // q_full = 4 of 6: fF+1 = 2 supporters would not intersect every
        // 4-strong parent set; 3 do.
        assert_eq!(t6.support_threshold(), 3);
        let t3 = CommitState::new(&Topology::build(3, 1, 1, 0, false));
        assert_eq!(t3.support_threshold(), 2);
    }

    #[test]
    fn anchor_slots_rotate_over_zones() {
        let state = CommitState::new(&Topology::build(4, 1, 1, 0, false));
        let slots: Vec<u16> = (1..=5).map(|w| state.anchor_zone(2 * w).0).collect();
        assert_eq!(slots, vec![0, 1, 2, 3, 0]);
    }

    #[test]
    fn snapshot_restore_resumes_at_same_point() {
        let t = lattice();
        let mut full = t.commit_state();
        let all = full.try_commit(&t.dag);

        let mut partial = t.commit_state();
        // Replay against a view that stops at round 3 (only wave 1
        // committable).
        let mut t2 = TestDag::new(4);
        for z in 0..4 {
            t2.add(1, z, &[]);
        }
        t2.add(2, 0, &[(1, 0), (1, 1), (1, 2)]);
        t2.add(2, 1, &[(1, 1), (1, 2), (1, 3)]);
        t2.add(2, 2, &[(1, 0), (1, 2), (1, 3)]);
        t2.add(2, 3, &[(1, 0), (1, 1), (1, 3)]);
        t2.add(3, 0, &[(2, 0), (2, 1), (2, 2)]);
        t2.add(3, 1, &[(2, 1), (2, 2), (2, 3)]);
        t2.add(3, 2, &[(2, 0), (2, 2), (2, 3)]);
        t2.add(3, 3, &[(2, 1), (2, 2), (2, 3)]);
        let first = partial.try_commit(&t2.dag);
        assert_eq!(first.len(), 1);

        // A recovered member restores the snapshot and continues on the
        // full view: it must produce exactly the remaining batches.
        let mut resumed = CommitState::restore(&t.topo, partial.export());
        let rest = resumed.try_commit(&t.dag);
        assert_eq!(rest.len(), all.len() - 1);
        for (a, b) in all[1..].iter().zip(&rest) {
            assert_eq!(a.k, b.k);
            assert_eq!(a.blocks, b.blocks);
        }
    }
}
