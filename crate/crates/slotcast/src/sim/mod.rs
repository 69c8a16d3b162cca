//! Deterministic discrete-event network simulator.
//!
//! Single-threaded: a binary heap of `(fire_at, seq)`-ordered events drives
//! node state machines that run inline in the event handlers. Two channel
//! modes are provided over the same link models:
//!
//! - **unreliable datagrams** (for the reference algorithm): per-send drop
//!   roll, constant latency, no ordering guarantee beyond the queue's;
//! - **reliable connections** (for the engine): in-order, exactly-once
//!   delivery with latency plus `size/bandwidth` serialization delay while a
//!   connection lives; breaking the connection loses everything in flight,
//!   notifies senders, and hands out fresh connection ids on reconnect.
//!
//! Both modes are authenticated: a delivery always reports the true sender.
//! Faults — link/node connectivity windows, crashes (volatile state erased),
//! restarts — are ordinary events, so a `(scenario, seed)` pair replays to an
//! identical run.

pub mod event;
pub mod link;

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::metrics::RunMetrics;
use crate::types::{MessageId, PeerId, SimTime, SlotUpdate, TaskKey};
use crate::wire::Frame;

pub use event::{EventKind, SimEvent, TimerKind};
pub use link::{pair_key, ConnState, InFlight, LinkModel, LinkState};

/// Derive an independent deterministic RNG from a seed and a label pair.
/// splitmix64 over the inputs; quality is ample for simulation use.
pub fn derive_rng(seed: u64, a: u64, b: u64) -> ChaCha12Rng {
    let mut x = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    let mut next = || {
        x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&next().to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SimError {
    SchedulingInPast { at: SimTime, now: SimTime },
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SendError {
    /// The sending node is down.
    SourceDown,
    /// No live connection to the destination.
    Disconnected,
}

/// Line-oriented debug log of notable run events: faults, connection
/// transitions, client errors. One record per line: `time node detail`.
#[derive(Debug, Default)]
pub struct EventLog {
    lines: Vec<String>,
}

impl EventLog {
    pub fn line(&mut self, now: SimTime, who: &str, detail: &str) {
        self.lines.push(format!("{now} {who} {detail}"));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            out.push_str(l);
            out.push('\n');
        }
        out
    }
}

/// Everything a node handler may touch except the nodes themselves.
pub struct World {
    n: u32,
    now: SimTime,
    queue: BinaryHeap<SimEvent>,
    next_seq: u64,
    next_frame_seq: u64,
    reconnect_delay_ms: u64,
    pub rng: ChaCha12Rng,
    links: BTreeMap<(PeerId, PeerId), LinkState>,
    conns: BTreeMap<(PeerId, PeerId), ConnState>,
    node_up: Vec<bool>,
    node_epoch: Vec<u64>,
    pub metrics: RunMetrics,
    pub log: EventLog,
}

impl World {
    /// A world of `n` nodes with every connection established at time zero.
    /// `link_for` supplies the model of each directed link.
    pub fn new(
        n: u32,
        reconnect_delay_ms: u64,
        rng_seed: u64,
        mut link_for: impl FnMut(PeerId, PeerId) -> LinkModel,
    ) -> World {
        let mut links = BTreeMap::new();
        let mut conns = BTreeMap::new();
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                links.insert(
                    (PeerId(a), PeerId(b)),
                    LinkState::new(link_for(PeerId(a), PeerId(b))),
                );
                if a < b {
                    conns.insert(
                        (PeerId(a), PeerId(b)),
                        ConnState {
                            up: true,
                            id_lo_to_hi: 1,
                            id_hi_to_lo: 1,
                            inflight: BTreeMap::new(),
                        },
                    );
                }
            }
        }
        World {
            n,
            now: 0,
            queue: BinaryHeap::new(),
            next_seq: 0,
            next_frame_seq: 0,
            reconnect_delay_ms,
            rng: derive_rng(rng_seed, 0x776f726c64, 0),
            links,
            conns,
            node_up: alloc::vec![true; n as usize],
            node_epoch: alloc::vec![0; n as usize],
            metrics: RunMetrics::new(n),
            log: EventLog::default(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn node_up(&self, node: PeerId) -> bool {
        self.node_up[node.index()]
    }

    pub fn node_epoch(&self, node: PeerId) -> u64 {
        self.node_epoch[node.index()]
    }

    pub fn link(&self, src: PeerId, dst: PeerId) -> &LinkState {
        &self.links[&(src, dst)]
    }

    /// Enqueue an event. Scheduling into the past is an error; two events at
    /// the same instant fire in submission order.
    pub fn schedule(&mut self, at: SimTime, kind: EventKind) -> Result<(), SimError> {
        if at < self.now {
            return Err(SimError::SchedulingInPast { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(SimEvent {
            fire_at: at,
            seq,
            kind,
        });
        Ok(())
    }

    pub fn schedule_in(&mut self, delay: SimTime, kind: EventKind) {
        let at = self.now + delay;
        self.schedule(at, kind).expect("future time");
    }

    /// Current connection id for the `src -> dst` direction, if connected.
    pub fn conn_id(&self, src: PeerId, dst: PeerId) -> Option<u64> {
        let conn = self.conns.get(&pair_key(src, dst))?;
        if conn.up {
            Some(conn.direction_id(src, dst))
        } else {
            None
        }
    }

    /// Reliable-mode send. On success the frame is in flight: it arrives
    /// in order after serialization plus latency, unless the connection
    /// breaks first (then it is lost and `notify`, if set, comes back as a
    /// send failure).
    pub fn send_frame(
        &mut self,
        src: PeerId,
        dst: PeerId,
        frame: Frame,
        notify: Option<TaskKey>,
    ) -> Result<(), SendError> {
        if !self.node_up[src.index()] {
            return Err(SendError::SourceDown);
        }
        let conn = self
            .conns
            .get_mut(&pair_key(src, dst))
            .filter(|c| c.up)
            .ok_or(SendError::Disconnected)?;
        let bytes = frame.encoded_len();
        let frame_seq = self.next_frame_seq;
        self.next_frame_seq += 1;
        conn.inflight.insert(
            frame_seq,
            InFlight {
                src,
                dst,
                bytes,
                notify,
            },
        );
        let link = self.links.get_mut(&(src, dst)).expect("link exists");
        let depart = core::cmp::max(self.now, link.busy_until);
        let done = depart + link.model.serialize_ms(bytes);
        link.busy_until = done;
        let arrival = done + link.model.one_way_latency_ms;
        self.metrics.classify_sent(src, &frame);
        self.schedule(arrival, EventKind::DeliverFrame {
            src,
            dst,
            frame_seq,
            frame,
        })
        .expect("future time");
        Ok(())
    }

    /// Unreliable-mode send: one drop roll, no serialization model, no
    /// failure feedback.
    pub fn send_datagram(
        &mut self,
        src: PeerId,
        dst: PeerId,
        update: SlotUpdate,
    ) -> Result<(), SendError> {
        if !self.node_up[src.index()] {
            return Err(SendError::SourceDown);
        }
        let link = self.links.get(&(src, dst)).expect("link exists");
        if !link.is_up() {
            return Ok(()); // dropped silently
        }
        let p = link.model.drop_probability;
        let latency = link.model.one_way_latency_ms;
        if p > 0.0 && self.rng.gen_bool(p.min(1.0)) {
            return Ok(()); // dropped silently
        }
        self.schedule_in(latency, EventKind::DeliverDatagram { src, dst, update });
        Ok(())
    }

    /// Tear down the connection of a pair, if up: everything in flight is
    /// lost (senders with attached tasks get failure notices) and both ends
    /// are told the connection is gone.
    fn break_conn(&mut self, a: PeerId, b: PeerId) {
        let key = pair_key(a, b);
        let Some(conn) = self.conns.get_mut(&key) else {
            return;
        };
        if !conn.up {
            return;
        }
        conn.up = false;
        let inflight = core::mem::take(&mut conn.inflight);
        let now = self.now;
        for (_, fl) in inflight {
            self.metrics.add_lost_bytes(fl.bytes);
            if let Some(key) = fl.notify {
                let epoch = self.node_epoch[fl.src.index()];
                self.schedule(now, EventKind::SendFailed {
                    node: fl.src,
                    epoch,
                    key,
                })
                .expect("now");
            }
        }
        for (node, peer) in [(a, b), (b, a)] {
            let epoch = self.node_epoch[node.index()];
            self.schedule(now, EventKind::ConnDown { node, epoch, peer })
                .expect("now");
        }
        self.log
            .line(now, "net", &format!("conn_down {a} {b}"));
    }

    /// Schedule a reconnect attempt if both endpoints and the link allow it.
    fn maybe_schedule_reconnect(&mut self, a: PeerId, b: PeerId) {
        let key = pair_key(a, b);
        let conn_down = self.conns.get(&key).is_some_and(|c| !c.up);
        let links_up =
            self.links[&(a, b)].is_up() && self.links[&(b, a)].is_up();
        if conn_down && links_up && self.node_up[a.index()] && self.node_up[b.index()] {
            self.schedule_in(self.reconnect_delay_ms, EventKind::Establish { a, b });
        }
    }

    fn set_link_down(&mut self, a: PeerId, b: PeerId) {
        for key in [(a, b), (b, a)] {
            let link = self.links.get_mut(&key).expect("link exists");
            link.down_count += 1;
        }
        self.break_conn(a, b);
    }

    fn set_link_up(&mut self, a: PeerId, b: PeerId) {
        for key in [(a, b), (b, a)] {
            let link = self.links.get_mut(&key).expect("link exists");
            link.down_count = link.down_count.saturating_sub(1);
        }
        self.maybe_schedule_reconnect(a, b);
    }

    fn others(&self, node: PeerId) -> Vec<PeerId> {
        (0..self.n)
            .map(PeerId)
            .filter(|p| *p != node)
            .collect()
    }
}

/// Handle a node uses to act on the world from inside an event handler.
pub struct Ctx<'a> {
    pub me: PeerId,
    pub world: &'a mut World,
}

impl<'a> Ctx<'a> {
    pub fn now(&self) -> SimTime {
        self.world.now()
    }

    pub fn send_frame(
        &mut self,
        dst: PeerId,
        frame: Frame,
        notify: Option<TaskKey>,
    ) -> Result<(), SendError> {
        self.world.send_frame(self.me, dst, frame, notify)
    }

    pub fn send_datagram(&mut self, dst: PeerId, update: SlotUpdate) -> Result<(), SendError> {
        self.world.send_datagram(self.me, dst, update)
    }

    /// Arm a timer for this node; swallowed if the node crashes or restarts
    /// before it fires.
    pub fn timer_in(&mut self, delay: SimTime, kind: TimerKind) {
        let epoch = self.world.node_epoch(self.me);
        let node = self.me;
        self.world
            .schedule_in(delay, EventKind::Timer { node, epoch, kind });
    }

    pub fn conn_id(&self, peer: PeerId) -> Option<u64> {
        self.world.conn_id(self.me, peer)
    }

    pub fn rng(&mut self) -> &mut ChaCha12Rng {
        &mut self.world.rng
    }

    pub fn metrics(&mut self) -> &mut RunMetrics {
        &mut self.world.metrics
    }

    pub fn log(&mut self, detail: &str) {
        let now = self.world.now();
        let who = format!("{}", self.me);
        self.world.log.line(now, &who, detail);
    }
}

/// A simulated participant. Engine nodes, reference nodes, and adversaries
/// all implement this; the observation methods feed metrics and assertions
/// and must not mutate.
pub trait SimNode {
    fn on_start(&mut self, ctx: &mut Ctx<'_>);
    fn on_frame(&mut self, ctx: &mut Ctx<'_>, src: PeerId, frame: Frame);
    fn on_timer(&mut self, ctx: &mut Ctx<'_>, kind: TimerKind);

    fn on_datagram(&mut self, _ctx: &mut Ctx<'_>, _src: PeerId, _update: SlotUpdate) {}
    fn on_send_failed(&mut self, _ctx: &mut Ctx<'_>, _key: TaskKey) {}
    fn on_conn_down(&mut self, _ctx: &mut Ctx<'_>, _peer: PeerId) {}
    fn on_conn_up(&mut self, _ctx: &mut Ctx<'_>, _peer: PeerId, _conn_id: u64) {}
    /// Volatile state is erased; durable state (the validated pool) survives.
    fn on_crash(&mut self) {}
    fn on_restart(&mut self, _ctx: &mut Ctx<'_>) {}

    /// Message present in the node's unvalidated or validated pool.
    fn holds(&self, _id: &MessageId) -> bool {
        false
    }
    /// Bouncer verdict for an advertised message.
    fn accepts(&self, _now: SimTime, _id: &MessageId, _size: u64) -> bool {
        false
    }
    /// Receive-side slot entries currently tracked.
    fn tracked_entries(&self) -> u64 {
        0
    }
    /// (entries, bytes) of the unvalidated pool.
    fn unvalidated_stats(&self) -> (u64, u64) {
        (0, 0)
    }
    /// Whether this node participates in delivery metrics.
    fn is_engine(&self) -> bool {
        false
    }
    /// Every pooled entry's id matches its payload digest.
    fn pool_digests_valid(&self) -> bool {
        true
    }
}

/// What `Simulator::step` surfaced to the caller.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum StepOutcome {
    Processed,
    /// A sampling point; the caller owns what to record.
    Sample,
    End,
    /// Queue exhausted before an `End` event.
    Idle,
}

pub struct Simulator {
    pub world: World,
    nodes: Vec<Option<Box<dyn SimNode>>>,
}

impl Simulator {
    pub fn new(world: World, nodes: Vec<Box<dyn SimNode>>) -> Simulator {
        assert_eq!(world.n as usize, nodes.len());
        Simulator {
            world,
            nodes: nodes.into_iter().map(Some).collect(),
        }
    }

    pub fn node(&self, id: PeerId) -> &dyn SimNode {
        self.nodes[id.index()].as_deref().expect("node present")
    }

    /// Deliver `on_start` to every node, in id order, at time zero.
    pub fn start(&mut self) {
        for i in 0..self.nodes.len() {
            self.with_node(PeerId(i as u32), |node, ctx| node.on_start(ctx));
        }
    }

    fn with_node(&mut self, id: PeerId, f: impl FnOnce(&mut dyn SimNode, &mut Ctx<'_>)) {
        let mut node = self.nodes[id.index()].take().expect("node present");
        {
            let mut ctx = Ctx {
                me: id,
                world: &mut self.world,
            };
            f(node.as_mut(), &mut ctx);
        }
        self.nodes[id.index()] = Some(node);
    }

    /// Pop and process one event.
    pub fn step(&mut self) -> StepOutcome {
        let Some(ev) = self.world.queue.pop() else {
            return StepOutcome::Idle;
        };
        debug_assert!(ev.fire_at >= self.world.now);
        self.world.now = ev.fire_at;
        match ev.kind {
            EventKind::DeliverFrame {
                src,
                dst,
                frame_seq,
                frame,
            } => {
                let key = pair_key(src, dst);
                let still_tracked = self
                    .world
                    .conns
                    .get_mut(&key)
                    .and_then(|c| c.inflight.remove(&frame_seq))
                    .is_some();
                if still_tracked {
                    debug_assert!(self.world.node_up[dst.index()]);
                    self.world.metrics.classify_received(dst, &frame);
                    self.with_node(dst, |node, ctx| node.on_frame(ctx, src, frame));
                }
            }
            EventKind::DeliverDatagram { src, dst, update } => {
                if self.world.node_up[dst.index()] {
                    self.with_node(dst, |node, ctx| node.on_datagram(ctx, src, update));
                }
            }
            EventKind::Timer { node, epoch, kind } => {
                if self.world.node_up[node.index()]
                    && self.world.node_epoch[node.index()] == epoch
                {
                    self.with_node(node, |n, ctx| n.on_timer(ctx, kind));
                }
            }
            EventKind::SendFailed { node, epoch, key } => {
                if self.world.node_up[node.index()]
                    && self.world.node_epoch[node.index()] == epoch
                {
                    self.with_node(node, |n, ctx| n.on_send_failed(ctx, key));
                }
            }
            EventKind::ConnDown { node, epoch, peer } => {
                if self.world.node_up[node.index()]
                    && self.world.node_epoch[node.index()] == epoch
                {
                    self.with_node(node, |n, ctx| n.on_conn_down(ctx, peer));
                }
            }
            EventKind::LinkDown { a, b } => {
                self.world
                    .log
                    .line(self.world.now, "fault", &format!("link_down {a} {b}"));
                self.world.set_link_down(a, b);
            }
            EventKind::LinkUp { a, b } => {
                self.world
                    .log
                    .line(self.world.now, "fault", &format!("link_up {a} {b}"));
                self.world.set_link_up(a, b);
            }
            EventKind::NodeLinksDown { node } => {
                self.world
                    .log
                    .line(self.world.now, "fault", &format!("links_down {node}"));
                for peer in self.world.others(node) {
                    self.world.set_link_down(node, peer);
                }
            }
            EventKind::NodeLinksUp { node } => {
                self.world
                    .log
                    .line(self.world.now, "fault", &format!("links_up {node}"));
                for peer in self.world.others(node) {
                    self.world.set_link_up(node, peer);
                }
            }
            EventKind::Crash { node } => {
                if self.world.node_up[node.index()] {
                    self.world
                        .log
                        .line(self.world.now, "fault", &format!("crash {node}"));
                    self.world.node_up[node.index()] = false;
                    self.world.node_epoch[node.index()] += 1;
                    for peer in self.world.others(node) {
                        self.world.break_conn(node, peer);
                    }
                    if let Some(n) = self.nodes[node.index()].as_mut() {
                        n.on_crash();
                    }
                    self.world.metrics.on_node_wipe(node);
                }
            }
            EventKind::Restart { node } => {
                if !self.world.node_up[node.index()] {
                    self.world
                        .log
                        .line(self.world.now, "fault", &format!("restart {node}"));
                    self.world.node_up[node.index()] = true;
                    self.world.node_epoch[node.index()] += 1;
                    self.with_node(node, |n, ctx| n.on_restart(ctx));
                    for peer in self.world.others(node) {
                        self.world.maybe_schedule_reconnect(node, peer);
                    }
                }
            }
            EventKind::Establish { a, b } => {
                let key = pair_key(a, b);
                let links_up =
                    self.world.links[&(a, b)].is_up() && self.world.links[&(b, a)].is_up();
                let nodes_up =
                    self.world.node_up[a.index()] && self.world.node_up[b.index()];
                let conn = self.world.conns.get_mut(&key).expect("conn exists");
                if links_up && nodes_up && !conn.up {
                    conn.up = true;
                    conn.id_lo_to_hi += 1;
                    conn.id_hi_to_lo += 1;
                    let id_ab = conn.direction_id(a, b);
                    let id_ba = conn.direction_id(b, a);
                    self.world
                        .log
                        .line(self.world.now, "net", &format!("conn_up {a} {b}"));
                    self.with_node(a, |n, ctx| n.on_conn_up(ctx, b, id_ab));
                    self.with_node(b, |n, ctx| n.on_conn_up(ctx, a, id_ba));
                }
            }
            EventKind::Sample => return StepOutcome::Sample,
            EventKind::End => return StepOutcome::End,
        }
        StepOutcome::Processed
    }
}
