//! Byzantine behavior as an output filter: the wrapped committee member runs
//! the honest protocol unmodified, and the adapter rewrites its outbound
//! messages afterwards. Signing stays keyed to the node's own identity, so
//! the adversary can equivocate and tamper but never forge.
//!
//! Equivocation splits every vertex broadcast: the first half of the
//! recipients receives the real vertex, the rest a variant with the last
//! block digest dropped. Tampering targets one field by name: `digests`
//! (reorder a vertex's block list), `ents` (corrupt the sync payload sent to
//! the zone), or `state` (zero the state digest in outgoing proof shares,
//! re-signed so only the content check can catch it).

use super::{CommitteeNode, Message, TimerKind, World};
use crate::crypto::Digest;
use crate::simnet::{Actor, Ctx, SimTime};
use crate::types::{CertKind, Certificate, NodeId, Shared, TxId};

type NodeCtx<'a> = Ctx<'a, Message, TimerKind, World>;

pub struct ByzAdapter {
    inner: CommitteeNode,
    equivocate: bool,
    tamper: Option<String>,
}

impl ByzAdapter {
    pub fn new(inner: CommitteeNode, equivocate: bool, tamper: Option<String>) -> ByzAdapter {
        ByzAdapter { inner, equivocate, tamper }
    }

    fn transform(&mut self, ctx: &mut NodeCtx<'_>) {
        let mut out = ctx.drain_out();
        if let Some(field) = self.tamper.clone() {
            out = self.apply_tamper(ctx, &field, out);
        }
        if self.equivocate {
            out = equivocate_vertices(out);
        }
        for (to, msg) in out {
            ctx.send(to, msg);
        }
    }

    fn apply_tamper(
        &mut self,
        ctx: &mut NodeCtx<'_>,
        field: &str,
        out: Vec<(NodeId, Message)>,
    ) -> Vec<(NodeId, Message)> {
        out.into_iter()
            .map(|(to, msg)| {
                let msg = match (field, msg) {
                    ("digests", Message::VertexMsg { vertex }) => {
                        let mut v = (*vertex).clone();
                        if v.digests.len() >= 2 {
                            v.digests.reverse();
                        } else if let Some(d) = v.digests.first_mut() {
                            d.1 = Digest::of_bytes(&d.1 .0);
                        }
                        Message::VertexMsg { vertex: Shared::new(v) }
                    }
                    ("ents", Message::Proc { k, mut payload, proof, cert }) => {
                        payload.ents.reverse();
                        payload.aborted_global.push(TxId {
                            zone: u16::MAX,
                            client: u16::MAX,
                            seq: u32::MAX,
                        });
                        Message::Proc { k, payload, proof, cert }
                    }
                    ("state", Message::ProofShare { proof, .. }) => {
                        let mut p = (*proof).clone();
                        p.state_digest = Digest::zero();
                        let signed =
                            Certificate::signing_digest(CertKind::Proc, &p.core_digest());
                        let token = ctx.world.crypto.sign(ctx.me, &signed);
                        Message::ProofShare { proof: Shared::new(p), token }
                    }
                    (_, msg) => msg,
                };
                (to, msg)
            })
            .collect()
    }
}

/// Splits each vertex broadcast into two signed-by-the-same-creator variants
/// going to disjoint recipient halves. Neither half alone is a vote quorum
/// problem; detection happens when certificates circulate.
fn equivocate_vertices(out: Vec<(NodeId, Message)>) -> Vec<(NodeId, Message)> {
    let mut result = Vec::with_capacity(out.len());
    let mut pending: Vec<(NodeId, Shared<crate::dag::Vertex>)> = Vec::new();
    let mut current: Option<Digest> = None;
    let flush = |pending: &mut Vec<(NodeId, Shared<crate::dag::Vertex>)>,
                 result: &mut Vec<(NodeId, Message)>| {
        if pending.is_empty() {
            return;
        }
        let variant = pending.first().and_then(|(_, v)| {
            if pending.len() >= 2 && !v.digests.is_empty() {
                let mut alt = (**v).clone();
                alt.digests.pop();
                Some(Shared::new(alt))
            } else {
                None
            }
        });
        let half = pending.len().div_ceil(2);
        for (i, (to, vertex)) in pending.drain(..).enumerate() {
            let vertex = match &variant {
                Some(alt) if i >= half => alt.clone(),
                _ => vertex,
            };
            result.push((to, Message::VertexMsg { vertex }));
        }
    };
    for (to, msg) in out {
        match msg {
            Message::VertexMsg { vertex } => {
                let digest = vertex.structural_digest();
                if current != Some(digest) {
                    flush(&mut pending, &mut result);
                    current = Some(digest);
                }
                pending.push((to, vertex));
            }
            other => result.push((to, other)),
        }
    }
    flush(&mut pending, &mut result);
    result
}

impl Actor<Message, TimerKind, World> for ByzAdapter {
    fn on_message(&mut self, ctx: &mut NodeCtx<'_>, from: NodeId, msg: Message) {
        self.inner.on_message(ctx, from, msg);
        self.transform(ctx);
    }

    fn on_timer(&mut self, ctx: &mut NodeCtx<'_>, timer: TimerKind) {
        self.inner.on_timer(ctx, timer);
        self.transform(ctx);
    }

    fn on_crash(&mut self, world: &mut World, now: SimTime) {
        self.inner.on_crash(world, now);
    }

    fn at_end(&mut self, world: &mut World, now: SimTime) {
        self.inner.at_end(world, now);
    }
}
