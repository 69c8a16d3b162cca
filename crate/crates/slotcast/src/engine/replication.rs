//! Send-side engine: maps validated-pool change actions onto the send slot
//! table and per-(peer, slot) send tasks.
//!
//! A send task owns the delivery of the newest content of one slot to one
//! peer. Tasks die when their slot changes version (abort or overwrite) and
//! are recreated wholesale — never repurposed — which keeps the invariant
//! simple: a live task's version always equals its slot's current version.
//! Failed sends retry with exponentially increasing jittered delays; a
//! changed peer connection id kills every task for that peer and replaces
//! them with advert-only tasks for the occupied slots, which is the whole
//! crash/reconnect recovery story.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::Rng;

use crate::reference::{SendTable, SlotTableError};
use crate::sim::{Ctx, TimerKind};
use crate::types::{
    EngineConfig, Message, MessageId, PeerId, SimTime, SlotContent, SlotIndex, TaskKey, Version,
};
use crate::wire::Frame;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TaskState {
    Pending,
    /// Handed to transport; stays here unless the transport reports loss.
    Sent,
    /// Waiting out a backoff delay.
    Backoff { retry_at: SimTime },
}

#[derive(Clone, Debug)]
pub struct SendTask {
    pub version: Version,
    pub content: SlotContent,
    pub state: TaskState,
    pub attempts: u32,
}

pub struct Replication {
    peers: Vec<PeerId>,
    push_threshold: u64,
    backoff_base_ms: u64,
    backoff_cap_ms: u64,
    baseline: bool,
    pub table: SendTable,
    pub tasks: BTreeMap<(PeerId, SlotIndex), SendTask>,
    pub last_seen_conn_id: BTreeMap<PeerId, u64>,
}

impl Replication {
    pub fn new(cfg: &EngineConfig, peers: Vec<PeerId>) -> Replication {
        Replication {
            peers,
            push_threshold: cfg.push_threshold,
            backoff_base_ms: cfg.backoff_base_ms,
            backoff_cap_ms: cfg.backoff_cap_ms,
            baseline: cfg.is_baseline(),
            table: SendTable::new(cfg.capacity),
            tasks: BTreeMap::new(),
            last_seen_conn_id: BTreeMap::new(),
        }
    }

    pub fn live_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Broadcast: assign a slot, then spawn one task per peer carrying the
    /// full payload (small or flagged messages) or just the advert.
    pub fn apply_add(
        &mut self,
        ctx: &mut Ctx<'_>,
        message: Message,
        push_directly: bool,
    ) -> Result<(SlotIndex, Version), SlotTableError> {
        let (slot, version) = self.table.broadcast(message.clone())?;
        let content = if push_directly || message.size() <= self.push_threshold {
            SlotContent::Full(message)
        } else {
            SlotContent::Advert(message.advert())
        };
        for peer in self.peers.clone() {
            self.spawn_task(ctx, peer, slot, version, content.clone());
        }
        Ok((slot, version))
    }

    /// Abort: free the slot and terminate every task for it. Nothing is
    /// sent; peers learn of the abort only when the slot is reused.
    pub fn apply_remove(&mut self, id: &MessageId) -> Result<(SlotIndex, Version), SlotTableError> {
        let (slot, version) = self.table.abort(id)?;
        self.tasks.retain(|(_, s), _| *s != slot);
        Ok((slot, version))
    }

    /// The peer reconnected under a fresh connection id: drop whatever tasks
    /// were bound to the old connection and re-announce every occupied slot,
    /// adverts only. Freed slots announce nothing. Stale (non-increasing)
    /// notifications are ignored.
    pub fn on_conn_id_change(&mut self, ctx: &mut Ctx<'_>, peer: PeerId, new_id: u64) {
        let last = self.last_seen_conn_id.get(&peer).copied().unwrap_or(0);
        if new_id <= last {
            return;
        }
        self.last_seen_conn_id.insert(peer, new_id);
        self.tasks.retain(|(p, _), _| *p != peer);
        let occupied: Vec<(SlotIndex, Version, SlotContent)> = self
            .table
            .occupied()
            .map(|(slot, version, m)| (slot, version, SlotContent::Advert(m.advert())))
            .collect();
        for (slot, version, content) in occupied {
            self.spawn_task(ctx, peer, slot, version, content);
        }
    }

    pub fn note_conn_id(&mut self, peer: PeerId, id: u64) {
        self.last_seen_conn_id.insert(peer, id);
    }

    fn spawn_task(
        &mut self,
        ctx: &mut Ctx<'_>,
        peer: PeerId,
        slot: SlotIndex,
        version: Version,
        content: SlotContent,
    ) {
        // Replaces any surviving task for an older version of the slot.
        self.tasks.insert(
            (peer, slot),
            SendTask {
                version,
                content,
                state: TaskState::Pending,
                attempts: 0,
            },
        );
        self.try_send(ctx, peer, slot);
    }

    fn try_send(&mut self, ctx: &mut Ctx<'_>, peer: PeerId, slot: SlotIndex) {
        let Some(task) = self.tasks.get_mut(&(peer, slot)) else {
            return;
        };
        let frame = Frame::Update {
            slot,
            version: task.version,
            content: task.content.clone(),
        };
        let key = TaskKey {
            peer,
            slot,
            version: task.version,
        };
        match ctx.send_frame(peer, frame, Some(key)) {
            Ok(()) => task.state = TaskState::Sent,
            Err(_) => self.task_failed(ctx, key),
        }
    }

    /// Transport reported loss of the task's frame (or the send never left).
    pub fn on_send_failed(&mut self, ctx: &mut Ctx<'_>, key: TaskKey) {
        let matches = self
            .tasks
            .get(&(key.peer, key.slot))
            .is_some_and(|t| t.version == key.version && t.state == TaskState::Sent);
        if matches {
            self.task_failed(ctx, key);
        }
    }

    fn task_failed(&mut self, ctx: &mut Ctx<'_>, key: TaskKey) {
        if self.baseline {
            // Fire-and-forget mode: one shot, no recovery.
            self.tasks.remove(&(key.peer, key.slot));
            return;
        }
        let Some(task) = self.tasks.get_mut(&(key.peer, key.slot)) else {
            return;
        };
        if task.version != key.version {
            return;
        }
        let shift = task.attempts.min(30);
        let nominal = self
            .backoff_cap_ms
            .min(self.backoff_base_ms.saturating_mul(1u64 << shift));
        // Jitter: uniform in [0.5, 1.5] times the nominal delay.
        let delay = nominal / 2 + ctx.rng().gen_range(0..=nominal);
        task.attempts += 1;
        task.state = TaskState::Backoff {
            retry_at: ctx.now() + delay,
        };
        ctx.timer_in(delay, TimerKind::RetryTask(key));
    }

    pub fn on_retry(&mut self, ctx: &mut Ctx<'_>, key: TaskKey) {
        let due = self
            .tasks
            .get(&(key.peer, key.slot))
            .is_some_and(|t| t.version == key.version && matches!(t.state, TaskState::Backoff { .. }));
        if due {
            self.try_send(ctx, key.peer, key.slot);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_delay_windows() {
        // attempt 0 with base 100ms: nominal 100, jittered into [50, 150].
        // attempt 10 with cap 10s: nominal 10_000, jittered into [5s, 15s].
        let base: u64 = 100;
        let cap: u64 = 10_000;
        for attempts in [0u32, 10] {
            let shift = attempts.min(30);
            let nominal = cap.min(base.saturating_mul(1u64 << shift));
            let lo = nominal / 2;
            let hi = nominal / 2 + nominal;
            match attempts {
                0 => assert_eq!((lo, hi), (50, 150)),
                10 => assert_eq!((lo, hi), (5_000, 15_000)),
                _ => unreachable!(),
            }
        }
    }
}
