use super::{Message, TimerKind, World};
use crate::simnet::{Actor, Ctx};
use crate::types::{NodeId, TxType, ZoneId};
use crate::workload::TxGen;

type NodeCtx<'a> = Ctx<'a, Message, TimerKind, World>;

/// Workload client: fires pre-planned submissions toward its zone's current
/// committee member and joins outcome notifications into the run ledger
/// (first outcome wins; duplicates from redundant locals are dropped there).
pub struct ClientNode {
    zone: ZoneId,
    gen: TxGen,
}

impl ClientNode {
    pub fn new(zone: ZoneId, gen: TxGen) -> ClientNode {
        ClientNode { zone, gen }
    }
}

impl Actor<Message, TimerKind, World> for ClientNode {
    fn on_message(&mut self, ctx: &mut NodeCtx<'_>, _from: NodeId, msg: Message) {
        if let Message::OutcomeEvent { txid, outcome } = msg {
            let interference = ctx.world.interference.get(&txid).copied();
            ctx.world.ledger.record_with(txid, outcome, ctx.now, interference);
        }
    }

    fn on_timer(&mut self, ctx: &mut NodeCtx<'_>, timer: TimerKind) {
        if let TimerKind::ClientSubmit { .. } = timer {
            let tx = self.gen.next_tx();
            let ty = tx.classify().unwrap_or(TxType::Local);
            ctx.world.ledger.record_submit(tx.id, ctx.now, ty);
            let member = ctx.world.member_of(self.zone);
            ctx.send(member, Message::Submit { tx });
        }
    }
}
