//! The full send/receive engine for one node.
//!
//! Wires the replication manager (send side), the download manager (receive
//! side), and the update manager (client event loop) onto the simulator's
//! transport. The update manager's loop contract: the client's `drive` runs
//! once per tick and once per unvalidated-pool change, its actions apply to
//! the validated pool in list order, and errors (capacity, duplicates,
//! unknown removals) are surfaced and counted without ever stalling the
//! loop.
//!
//! Crash semantics: the engine state (slot tables, tasks, unvalidated pool)
//! is volatile and lost; the validated pool and the client survive. On
//! restart the engine rebroadcasts the persisted pool from a fresh slot
//! table, and the connection-id machinery brings the node and its peers back
//! in sync.

pub mod download;
pub mod replication;
pub mod update;

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use crate::clients::{Client, DriveTrigger};
use crate::sim::{Ctx, SimNode, TimerKind};
use crate::types::{
    ChangeAction, EngineConfig, Message, MessageId, PeerId, SimTime, SlotUpdate, TaskKey,
};
use crate::wire::Frame;

use download::{Download, PoolDeltas};
use replication::Replication;
use update::{PoolError, ValidatedPool};

pub struct EngineNode {
    me: PeerId,
    n: u32,
    cfg: EngineConfig,
    client: Box<dyn Client>,
    validated: ValidatedPool,
    repl: Replication,
    dl: Download,
}

impl EngineNode {
    pub fn new(me: PeerId, n: u32, cfg: EngineConfig, client: Box<dyn Client>) -> EngineNode {
        let peers: Vec<PeerId> = (0..n).map(PeerId).filter(|p| *p != me).collect();
        EngineNode {
            me,
            n,
            repl: Replication::new(&cfg, peers),
            dl: Download::new(me, &cfg, n),
            validated: ValidatedPool::new(cfg.capacity),
            client,
            cfg,
        }
    }

    pub fn me(&self) -> PeerId {
        self.me
    }

    pub fn replication(&self) -> &Replication {
        &self.repl
    }

    pub fn download(&self) -> &Download {
        &self.dl
    }

    pub fn validated(&self) -> &ValidatedPool {
        &self.validated
    }

    fn arm_timers(&self, ctx: &mut Ctx<'_>) {
        ctx.timer_in(self.cfg.tick_interval_ms, TimerKind::Tick);
        ctx.timer_in(self.cfg.conn_id_check_period_ms, TimerKind::ConnIdCheck);
    }

    fn drive_client(&mut self, ctx: &mut Ctx<'_>, trigger: DriveTrigger<'_>) {
        let now = ctx.now();
        let me = self.me;
        let is_tick = matches!(trigger, DriveTrigger::Tick);
        ctx.metrics().drive_call(me, is_tick, now);
        let mut actions = Vec::new();
        self.client
            .drive(now, &self.validated, &self.dl.pool, trigger, &mut actions);
        for action in actions {
            self.apply_action(ctx, action);
        }
    }

    fn apply_action(&mut self, ctx: &mut Ctx<'_>, action: ChangeAction) {
        let now = ctx.now();
        let me = self.me;
        match action {
            ChangeAction::Add {
                message,
                push_directly,
            } => {
                if message.size() > self.cfg.max_message_size {
                    ctx.metrics().action_error(me);
                    return;
                }
                match self.validated.insert(message.clone(), push_directly, now) {
                    Ok(()) => {}
                    Err(PoolError::Capacity) => {
                        ctx.metrics().capacity_error(me);
                        ctx.log(&format!("capacity error on add {}", message.id()));
                        return;
                    }
                    Err(PoolError::Duplicate(_)) => {
                        ctx.metrics().action_error(me);
                        return;
                    }
                }
                ctx.metrics().on_add(me, message.id(), message.size(), now);
                if let Err(e) = self.repl.apply_add(ctx, message.clone(), push_directly) {
                    // The table mirrors the pool, so this is unreachable; if
                    // it ever fires, keep the two consistent and surface it.
                    debug_assert!(false, "slot table diverged from pool: {e}");
                    self.validated.remove(&message.id());
                    ctx.metrics().action_error(me);
                }
            }
            ChangeAction::Remove { id } => {
                if self.validated.remove(&id).is_none() {
                    ctx.metrics().action_error(me);
                    return;
                }
                ctx.metrics().on_validated_remove(me, id, now);
                if self.repl.apply_remove(&id).is_err() {
                    debug_assert!(false, "slot table diverged from pool");
                    ctx.metrics().action_error(me);
                }
            }
        }
    }

    fn flush_deltas(&mut self, ctx: &mut Ctx<'_>, deltas: PoolDeltas) {
        if deltas.is_empty() {
            return;
        }
        self.drive_client(
            ctx,
            DriveTrigger::PoolDelta {
                added: &deltas.added,
                removed: &deltas.removed,
            },
        );
    }

    fn serve_pull(&mut self, ctx: &mut Ctx<'_>, requester: PeerId, id: MessageId) {
        // Serving reads the validated pool only: a message we have not
        // validated ourselves is never relayed from here.
        let payload = self.validated.get(&id).map(|e| e.message.payload_arc());
        let _ = ctx.send_frame(requester, Frame::PullResponse { id, payload }, None);
    }

    /// Rebroadcast the persisted validated pool from a fresh slot table.
    fn bootstrap_from_pool(&mut self, ctx: &mut Ctx<'_>) {
        let entries: Vec<(Message, bool, u64, SimTime)> = self
            .validated
            .in_insertion_order()
            .into_iter()
            .map(|e| (e.message.clone(), e.push_directly, e.message.size(), e.added_at))
            .collect();
        let me = self.me;
        let now = ctx.now();
        for (message, push_directly, size, _) in entries {
            ctx.metrics().on_add(me, message.id(), size, now);
            let _ = self.repl.apply_add(ctx, message, push_directly);
        }
    }
}

impl SimNode for EngineNode {
    fn on_start(&mut self, ctx: &mut Ctx<'_>) {
        for peer in (0..self.n).map(PeerId).filter(|p| *p != self.me) {
            if let Some(id) = ctx.conn_id(peer) {
                self.repl.note_conn_id(peer, id);
            }
        }
        self.arm_timers(ctx);
    }

    fn on_frame(&mut self, ctx: &mut Ctx<'_>, src: PeerId, frame: Frame) {
        match frame {
            Frame::Update {
                slot,
                version,
                content,
            } => {
                let mut deltas = PoolDeltas::default();
                {
                    let now = ctx.now();
                    let client = &self.client;
                    let validated = &self.validated;
                    let accept =
                        move |id: &MessageId, size: u64| client.accepts(now, id, size, validated);
                    self.dl
                        .handle_update(ctx, &accept, src, slot, version, content, &mut deltas);
                }
                self.flush_deltas(ctx, deltas);
            }
            Frame::PullRequest { id } => self.serve_pull(ctx, src, id),
            Frame::PullResponse { id, payload } => {
                let mut deltas = PoolDeltas::default();
                {
                    let now = ctx.now();
                    let client = &self.client;
                    let validated = &self.validated;
                    let accept =
                        move |id: &MessageId, size: u64| client.accepts(now, id, size, validated);
                    self.dl
                        .on_response(ctx, &accept, src, id, payload, &mut deltas);
                }
                self.flush_deltas(ctx, deltas);
            }
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_>, kind: TimerKind) {
        match kind {
            TimerKind::Tick => {
                self.dl.begin_tick();
                self.drive_client(ctx, DriveTrigger::Tick);
                {
                    let now = ctx.now();
                    let client = &self.client;
                    let validated = &self.validated;
                    let accept =
                        move |id: &MessageId, size: u64| client.accepts(now, id, size, validated);
                    self.dl.sweep(ctx, &accept);
                }
                ctx.timer_in(self.cfg.tick_interval_ms, TimerKind::Tick);
            }
            TimerKind::ConnIdCheck => {
                if self.cfg.mode == crate::types::EngineMode::Full {
                    for peer in (0..self.n).map(PeerId).filter(|p| *p != self.me) {
                        if let Some(id) = ctx.conn_id(peer) {
                            self.repl.on_conn_id_change(ctx, peer, id);
                        }
                    }
                }
                ctx.timer_in(self.cfg.conn_id_check_period_ms, TimerKind::ConnIdCheck);
            }
            TimerKind::RetryTask(key) => self.repl.on_retry(ctx, key),
            TimerKind::DownloadTimeout { id, epoch } => {
                let now = ctx.now();
                let client = &self.client;
                let validated = &self.validated;
                let accept =
                    move |mid: &MessageId, size: u64| client.accepts(now, mid, size, validated);
                self.dl.on_timeout(ctx, &accept, id, epoch);
            }
            _ => {}
        }
    }

    fn on_send_failed(&mut self, ctx: &mut Ctx<'_>, key: TaskKey) {
        self.repl.on_send_failed(ctx, key);
    }

    fn on_conn_down(&mut self, ctx: &mut Ctx<'_>, peer: PeerId) {
        let mut deltas = PoolDeltas::default();
        self.dl.on_conn_down(ctx, peer, &mut deltas);
        self.flush_deltas(ctx, deltas);
    }

    fn on_crash(&mut self) {
        // Slot tables, tasks, and the unvalidated pool are not persisted.
        let peers: Vec<PeerId> = (0..self.n).map(PeerId).filter(|p| *p != self.me).collect();
        self.repl = Replication::new(&self.cfg, peers);
        self.dl = Download::new(self.me, &self.cfg, self.n);
    }

    fn on_restart(&mut self, ctx: &mut Ctx<'_>) {
        self.arm_timers(ctx);
        self.bootstrap_from_pool(ctx);
    }

    fn on_datagram(&mut self, _ctx: &mut Ctx<'_>, _src: PeerId, _update: SlotUpdate) {
        // The engine speaks the connection-oriented transport only.
    }

    fn holds(&self, id: &MessageId) -> bool {
        self.validated.contains(id) || self.dl.pool.contains(id)
    }

    fn accepts(&self, now: SimTime, id: &MessageId, size: u64) -> bool {
        self.client.accepts(now, id, size, &self.validated)
    }

    fn tracked_entries(&self) -> u64 {
        self.dl.tracked_entries()
    }

    fn unvalidated_stats(&self) -> (u64, u64) {
        (self.dl.pool.len(), self.dl.pool.bytes())
    }

    fn is_engine(&self) -> bool {
        true
    }

    fn pool_digests_valid(&self) -> bool {
        self.dl.pool.iter().all(|(id, m)| m.id() == *id && m.verify())
    }
}
