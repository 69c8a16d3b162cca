//! Receive-side engine: slot-update handling, the bouncer gate, deduplicated
//! downloads, and the bounded unvalidated pool.
//!
//! Receive-side slot tables are not stored as full tables: each `(sender,
//! slot)` entry holds only the version and a reference (by id) to a download
//! task. One task exists per message id no matter how many peers advertise
//! it, so a payload is fetched once. A task lives exactly as long as at
//! least one slot entry references it; when the last advertiser overwrites
//! its slot or disconnects, the task dies and takes the pooled payload with
//! it — that eviction rule is what keeps the pool bounded against floods.
//!
//! Defenses against malicious senders, active when bounds are enforced:
//! slot indices outside `[1, capacity]` are dropped and counted as protocol
//! violations, per-peer update processing is rate-capped per tick (counted
//! separately), and payloads whose digest does not match the advertised id
//! never enter the pool.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::engine::update::{PoolError, UnvalidatedPool};
use crate::sim::{Ctx, TimerKind};
use crate::types::{
    message_id, EngineConfig, Message, MessageId, PeerId, SimTime, SlotContent, SlotIndex, Version,
};
use crate::wire::Frame;

/// Receive-side slot entry: the newest version seen for `(sender, slot)` and
/// the task it pins.
#[derive(Clone, Copy, Debug)]
pub struct SlotEntry {
    pub version: Version,
    pub id: MessageId,
}

#[derive(Clone, Copy, Debug)]
pub struct AdvertiserInfo {
    pub first_at: SimTime,
    /// Arrival rank; pulls go to the lowest-ranked advertiser first.
    pub order: u64,
    /// Number of this sender's slot entries referencing the task.
    pub refs: u32,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DownloadStatus {
    Pending,
    Downloading { from: PeerId, epoch: u64 },
    Downloaded,
}

#[derive(Clone, Debug)]
pub struct DownloadTask {
    pub size: u64,
    pub advertisers: BTreeMap<PeerId, AdvertiserInfo>,
    pub status: DownloadStatus,
    /// Round-robin cursor over advertisers in arrival order.
    pub rotation: u64,
}

impl DownloadTask {
    fn advertisers_in_order(&self) -> Vec<PeerId> {
        let mut v: Vec<(&PeerId, &AdvertiserInfo)> = self.advertisers.iter().collect();
        v.sort_by_key(|(_, info)| info.order);
        v.into_iter().map(|(p, _)| *p).collect()
    }
}

/// Net effect of one engine event on the unvalidated pool, fed back into the
/// client as a drive trigger.
#[derive(Debug, Default)]
pub struct PoolDeltas {
    pub added: Vec<MessageId>,
    pub removed: Vec<MessageId>,
}

impl PoolDeltas {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }
}

pub struct Download {
    me: PeerId,
    capacity: u32,
    max_message_size: u64,
    download_timeout_ms: u64,
    stream_cap: u32,
    inbound_cap: u32,
    enforce_bounds: bool,
    pub entries: BTreeMap<(PeerId, SlotIndex), SlotEntry>,
    pub tasks: BTreeMap<MessageId, DownloadTask>,
    pub pool: UnvalidatedPool,
    outstanding: BTreeMap<PeerId, u32>,
    inbound_used: BTreeMap<PeerId, u32>,
    next_order: u64,
    next_epoch: u64,
}

impl Download {
    pub fn new(me: PeerId, cfg: &EngineConfig, n: u32) -> Download {
        Download {
            me,
            capacity: cfg.capacity,
            max_message_size: cfg.max_message_size,
            download_timeout_ms: cfg.download_timeout_ms,
            stream_cap: cfg.max_concurrent_streams_per_peer,
            inbound_cap: cfg.inbound_update_cap(),
            enforce_bounds: cfg.enforce_bounds,
            entries: BTreeMap::new(),
            tasks: BTreeMap::new(),
            pool: UnvalidatedPool::new(cfg.unvalidated_bound(n), cfg.enforce_bounds),
            outstanding: BTreeMap::new(),
            inbound_used: BTreeMap::new(),
            next_order: 0,
            next_epoch: 0,
        }
    }

    pub fn tracked_entries(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn outstanding_to(&self, peer: PeerId) -> u32 {
        self.outstanding.get(&peer).copied().unwrap_or(0)
    }

    /// New tick: refill every peer's inbound update budget.
    pub fn begin_tick(&mut self) {
        self.inbound_used.clear();
    }

    /// Process one slot update from `sender`.
    pub fn handle_update(
        &mut self,
        ctx: &mut Ctx<'_>,
        accept: &dyn Fn(&MessageId, u64) -> bool,
        sender: PeerId,
        slot: SlotIndex,
        version: Version,
        content: SlotContent,
        deltas: &mut PoolDeltas,
    ) {
        if self.enforce_bounds {
            let used = self.inbound_used.entry(sender).or_insert(0);
            if *used >= self.inbound_cap {
                ctx.metrics().rate_limited(self.me);
                return;
            }
            *used += 1;
            if !slot.in_range(self.capacity) {
                ctx.metrics().protocol_violation(self.me);
                return;
            }
        }
        if content.size() > self.max_message_size {
            ctx.metrics().protocol_violation(self.me);
            return;
        }
        if let SlotContent::Full(m) = &content {
            if !m.verify() {
                ctx.metrics().protocol_violation(self.me);
                return;
            }
        }
        let id = content.id();
        match self.entries.get(&(sender, slot)) {
            Some(entry) if version <= entry.version => return, // stale
            Some(entry) if entry.id == id => {
                // Same message re-announced under a newer version (typical
                // after reconnect); reference counts are unchanged.
                self.entries.insert((sender, slot), SlotEntry { version, id });
            }
            Some(entry) => {
                let old = entry.id;
                self.entries.insert((sender, slot), SlotEntry { version, id });
                self.unlink(ctx, sender, old, deltas);
                self.link(sender, id, content.size(), ctx.now());
            }
            None => {
                self.entries.insert((sender, slot), SlotEntry { version, id });
                self.link(sender, id, content.size(), ctx.now());
            }
        }
        let gauge = self.tracked_entries();
        ctx.metrics().note_tracked(self.me, gauge);

        match content {
            SlotContent::Full(message) => {
                let downloaded = self
                    .tasks
                    .get(&id)
                    .is_some_and(|t| t.status == DownloadStatus::Downloaded);
                if !downloaded && accept(&id, message.size()) {
                    self.admit(ctx, message, deltas);
                }
                // Bouncer rejections record the advertiser and nothing else.
            }
            SlotContent::Advert(_) => {
                self.try_pull(ctx, accept, id);
            }
        }
    }

    fn link(&mut self, sender: PeerId, id: MessageId, size: u64, now: SimTime) {
        let task = self.tasks.entry(id).or_insert_with(|| DownloadTask {
            size,
            advertisers: BTreeMap::new(),
            status: DownloadStatus::Pending,
            rotation: 0,
        });
        match task.advertisers.get_mut(&sender) {
            Some(info) => info.refs += 1,
            None => {
                let order = self.next_order;
                self.next_order += 1;
                task.advertisers.insert(
                    sender,
                    AdvertiserInfo {
                        first_at: now,
                        order,
                        refs: 1,
                    },
                );
            }
        }
    }

    /// Drop one reference from `sender` to `id`; the last reference kills
    /// the task and evicts the pooled payload.
    fn unlink(
        &mut self,
        ctx: &mut Ctx<'_>,
        sender: PeerId,
        id: MessageId,
        deltas: &mut PoolDeltas,
    ) {
        let Some(task) = self.tasks.get_mut(&id) else {
            return;
        };
        let emptied = {
            let Some(info) = task.advertisers.get_mut(&sender) else {
                return;
            };
            info.refs = info.refs.saturating_sub(1);
            if info.refs == 0 {
                task.advertisers.remove(&sender);
            }
            task.advertisers.is_empty()
        };
        if emptied {
            if let DownloadStatus::Downloading { from, .. } = task.status {
                self.dec_outstanding(from);
            }
            self.tasks.remove(&id);
            if self.pool.remove(&id).is_some() {
                let me = self.me;
                ctx.metrics().on_pool_remove(me, id);
                deltas.removed.push(id);
            }
        }
    }

    fn dec_outstanding(&mut self, peer: PeerId) {
        if let Some(v) = self.outstanding.get_mut(&peer) {
            *v = v.saturating_sub(1);
            if *v == 0 {
                self.outstanding.remove(&peer);
            }
        }
    }

    /// Move a verified payload into the pool, if there is room.
    fn admit(&mut self, ctx: &mut Ctx<'_>, message: Message, deltas: &mut PoolDeltas) {
        let id = message.id();
        let size = message.size();
        let Some(task) = self.tasks.get_mut(&id) else {
            return;
        };
        if self.pool.contains(&id) {
            if let DownloadStatus::Downloading { from, .. } = task.status {
                self.dec_outstanding(from);
            }
            self.tasks.get_mut(&id).unwrap().status = DownloadStatus::Downloaded;
            return;
        }
        match self.pool.insert(message) {
            Ok(()) => {
                if let DownloadStatus::Downloading { from, .. } = task.status {
                    self.dec_outstanding(from);
                }
                self.tasks.get_mut(&id).unwrap().status = DownloadStatus::Downloaded;
                let me = self.me;
                let now = ctx.now();
                ctx.metrics().on_pool_insert(me, id, size, now);
                deltas.added.push(id);
            }
            Err(PoolError::Capacity) => {
                // Stays pending; retried once eviction frees a seat.
                let me = self.me;
                ctx.metrics().pool_refusal(me);
            }
            Err(PoolError::Duplicate(_)) => unreachable!("guarded by contains"),
        }
    }

    /// Issue a pull for a pending, bouncer-accepted task: first to the
    /// earliest advertiser, rotating round-robin on every failure. Peers at
    /// their concurrent-stream cap are left for a later sweep.
    fn try_pull(&mut self, ctx: &mut Ctx<'_>, accept: &dyn Fn(&MessageId, u64) -> bool, id: MessageId) {
        let Some(task) = self.tasks.get(&id) else {
            return;
        };
        if task.status != DownloadStatus::Pending || task.advertisers.is_empty() {
            return;
        }
        if !accept(&id, task.size) {
            return;
        }
        let order = task.advertisers_in_order();
        for _ in 0..order.len() {
            let task = self.tasks.get_mut(&id).unwrap();
            let peer = order[(task.rotation % order.len() as u64) as usize];
            if self.outstanding.get(&peer).copied().unwrap_or(0) >= self.stream_cap {
                return;
            }
            match ctx.send_frame(peer, Frame::PullRequest { id }, None) {
                Ok(()) => {
                    let epoch = self.next_epoch;
                    self.next_epoch += 1;
                    self.tasks.get_mut(&id).unwrap().status =
                        DownloadStatus::Downloading { from: peer, epoch };
                    *self.outstanding.entry(peer).or_insert(0) += 1;
                    ctx.timer_in(
                        self.download_timeout_ms,
                        TimerKind::DownloadTimeout { id, epoch },
                    );
                    return;
                }
                Err(_) => {
                    self.tasks.get_mut(&id).unwrap().rotation += 1;
                }
            }
        }
    }

    /// Tick sweep: re-evaluate the bouncer and retry every pending task.
    pub fn sweep(&mut self, ctx: &mut Ctx<'_>, accept: &dyn Fn(&MessageId, u64) -> bool) {
        let pending: Vec<MessageId> = self
            .tasks
            .iter()
            .filter(|(_, t)| t.status == DownloadStatus::Pending)
            .map(|(id, _)| *id)
            .collect();
        for id in pending {
            self.try_pull(ctx, accept, id);
        }
    }

    pub fn on_timeout(
        &mut self,
        ctx: &mut Ctx<'_>,
        accept: &dyn Fn(&MessageId, u64) -> bool,
        id: MessageId,
        epoch: u64,
    ) {
        let Some(task) = self.tasks.get_mut(&id) else {
            return;
        };
        match task.status {
            DownloadStatus::Downloading { from, epoch: e } if e == epoch => {
                task.status = DownloadStatus::Pending;
                task.rotation += 1;
                self.dec_outstanding(from);
                self.try_pull(ctx, accept, id);
            }
            _ => {}
        }
    }

    pub fn on_response(
        &mut self,
        ctx: &mut Ctx<'_>,
        accept: &dyn Fn(&MessageId, u64) -> bool,
        src: PeerId,
        id: MessageId,
        payload: Option<Arc<[u8]>>,
        deltas: &mut PoolDeltas,
    ) {
        let Some(task) = self.tasks.get_mut(&id) else {
            return; // task died while the response was in flight
        };
        let was_awaited = matches!(task.status, DownloadStatus::Downloading { from, .. } if from == src);
        if was_awaited {
            task.status = DownloadStatus::Pending;
            self.dec_outstanding(src);
        }
        match payload {
            Some(p) => {
                if p.len() as u64 > self.max_message_size || message_id(&p) != id {
                    ctx.metrics().protocol_violation(self.me);
                    if was_awaited {
                        self.tasks.get_mut(&id).unwrap().rotation += 1;
                        self.try_pull(ctx, accept, id);
                    }
                    return;
                }
                let task = self.tasks.get_mut(&id).unwrap();
                if task.status != DownloadStatus::Downloaded && accept(&id, p.len() as u64) {
                    self.admit(ctx, Message::from_parts(id, p), deltas);
                }
            }
            None => {
                // Refusal: the server no longer holds it (legal abort race).
                if was_awaited {
                    self.tasks.get_mut(&id).unwrap().rotation += 1;
                    self.try_pull(ctx, accept, id);
                }
            }
        }
    }

    /// Connection to `peer` broke: its receive-side table is considered
    /// empty until it retransmits after reconnecting, so every entry it
    /// contributed is unlinked; downloads aimed at it go back to pending.
    pub fn on_conn_down(&mut self, ctx: &mut Ctx<'_>, peer: PeerId, deltas: &mut PoolDeltas) {
        let stuck: Vec<MessageId> = self
            .tasks
            .iter()
            .filter(|(_, t)| matches!(t.status, DownloadStatus::Downloading { from, .. } if from == peer))
            .map(|(id, _)| *id)
            .collect();
        for id in stuck {
            let task = self.tasks.get_mut(&id).unwrap();
            task.status = DownloadStatus::Pending;
            task.rotation += 1;
            self.dec_outstanding(peer);
        }
        let gone: Vec<(PeerId, SlotIndex)> = self
            .entries
            .range((peer, SlotIndex::new(1).unwrap())..)
            .take_while(|((p, _), _)| *p == peer)
            .map(|(k, _)| *k)
            .collect();
        for key in gone {
            let entry = self.entries.remove(&key).unwrap();
            self.unlink(ctx, peer, entry.id, deltas);
        }
        self.inbound_used.remove(&peer);
        self.outstanding.remove(&peer);
    }
}
