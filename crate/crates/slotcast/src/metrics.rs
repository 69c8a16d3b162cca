//! Per-run accounting: goodput, latency, missing messages, bytes by
//! category, bound violations. Every byte a node sends or receives lands in
//! exactly one category, so the partitions below are checkable identities,
//! not estimates.
//!
//! The CSV schema (one wide `sample` row per sampling point, one `summary`
//! row at the end) is stable; tests parse it:
//!
//! ```text
//! record,time_ms,avg_missing,total_missing,delivered,latency_max_ms,
//! bytes_sent,sent_payload_bytes,sent_advert_bytes,sent_pull_bytes,sent_overhead_bytes,
//! bytes_received,unique_payload_bytes,duplicate_payload_bytes,recv_advert_bytes,
//! recv_pull_bytes,recv_overhead_bytes,lost_bytes,protocol_violations,rate_limited,
//! capacity_errors,drive_calls,max_tracked,missing_n<i>...,tracked_n<i>...
//! ```
//!
//! Counter columns are cumulative since the start of the run; `missing_*`
//! and `tracked_*` are gauges at the sampling instant. Goodput counts each
//! payload once per receiver: a payload byte starts in the duplicate bucket
//! and is promoted to `unique_payload_bytes` when it first enters that
//! receiver's unvalidated pool, so re-downloads after eviction, pushes a
//! bouncer rejected, and orphan payloads all stay classified as waste.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::types::{MessageId, PeerId, SimTime};
use crate::wire::Frame;

const HOLDS_UNVALIDATED: u8 = 1;
const HOLDS_VALIDATED: u8 = 2;

/// Byte counters of one node, split by direction and category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ByteCounters {
    pub sent_total: u64,
    pub sent_payload: u64,
    pub sent_advert: u64,
    pub sent_pull: u64,
    pub sent_overhead: u64,
    pub recv_total: u64,
    pub recv_unique_payload: u64,
    pub recv_dup_payload: u64,
    pub recv_advert: u64,
    pub recv_pull: u64,
    pub recv_overhead: u64,
}

impl ByteCounters {
    pub fn sent_partition_ok(&self) -> bool {
        self.sent_total
            == self.sent_payload + self.sent_advert + self.sent_pull + self.sent_overhead
    }

    pub fn recv_partition_ok(&self) -> bool {
        self.recv_total
            == self.recv_unique_payload
                + self.recv_dup_payload
                + self.recv_advert
                + self.recv_pull
                + self.recv_overhead
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct NodeCounters {
    pub bytes: ByteCounters,
    pub protocol_violations: u64,
    pub rate_limited: u64,
    pub capacity_errors: u64,
    pub action_errors: u64,
    pub pool_refusals: u64,
    pub drive_calls: u64,
    pub tick_drive_calls: u64,
    pub deliveries: u64,
    pub max_tracked_hwm: u64,
}

/// Lifecycle record of one client-created message.
#[derive(Clone, Debug)]
pub struct MsgStat {
    pub origin: PeerId,
    pub size: u64,
    pub created_at: SimTime,
    pub aborted_at: Option<SimTime>,
    /// First time the payload entered each receiver's unvalidated pool.
    pub first_delivered: BTreeMap<PeerId, SimTime>,
    /// Which pools currently hold the message, per node.
    holder_bits: BTreeMap<PeerId, u8>,
}

impl MsgStat {
    pub fn held_by(&self, node: PeerId) -> bool {
        self.holder_bits.get(&node).copied().unwrap_or(0) != 0
    }

    pub fn is_active(&self) -> bool {
        self.aborted_at.is_none()
    }
}

#[derive(Debug)]
pub struct RunMetrics {
    n: u32,
    nodes: Vec<NodeCounters>,
    pub messages: BTreeMap<MessageId, MsgStat>,
    /// (receiver, id) pairs whose payload reached the pool at least once;
    /// also covers untracked (adversary-fabricated) ids.
    delivered_once: BTreeSet<(PeerId, MessageId)>,
    pub lost_bytes: u64,
    pub latencies_ms: Vec<u64>,
    /// Per-node tick-drive timestamps, for cadence assertions.
    pub tick_drive_times: Vec<Vec<SimTime>>,
}

impl RunMetrics {
    pub fn new(n: u32) -> RunMetrics {
        RunMetrics {
            n,
            nodes: alloc::vec![NodeCounters::default(); n as usize],
            messages: BTreeMap::new(),
            delivered_once: BTreeSet::new(),
            lost_bytes: 0,
            latencies_ms: Vec::new(),
            tick_drive_times: alloc::vec![Vec::new(); n as usize],
        }
    }

    pub fn node(&self, id: PeerId) -> &NodeCounters {
        &self.nodes[id.index()]
    }

    pub fn nodes(&self) -> &[NodeCounters] {
        &self.nodes
    }

    // --- transport-side byte classification -------------------------------

    pub fn classify_sent(&mut self, node: PeerId, frame: &Frame) {
        let c = &mut self.nodes[node.index()].bytes;
        let len = frame.encoded_len();
        let payload = frame.payload_len();
        c.sent_total += len;
        match frame.kind_name() {
            "update_advert" => c.sent_advert += len,
            "pull_request" => c.sent_pull += len,
            "pull_refusal" => c.sent_overhead += len,
            _ => {
                c.sent_payload += payload;
                c.sent_overhead += len - payload;
            }
        }
    }

    pub fn classify_received(&mut self, node: PeerId, frame: &Frame) {
        let c = &mut self.nodes[node.index()].bytes;
        let len = frame.encoded_len();
        let payload = frame.payload_len();
        c.recv_total += len;
        match frame.kind_name() {
            "update_advert" => c.recv_advert += len,
            "pull_request" => c.recv_pull += len,
            "pull_refusal" => c.recv_overhead += len,
            _ => {
                // Payload bytes start as waste; promoted on first pool insert.
                c.recv_dup_payload += payload;
                c.recv_overhead += len - payload;
            }
        }
    }

    pub fn add_lost_bytes(&mut self, bytes: u64) {
        self.lost_bytes += bytes;
    }

    // --- pool and client lifecycle -----------------------------------------

    /// A client added a message to its validated pool. Re-adding after a
    /// restart keeps the original creation record.
    pub fn on_add(&mut self, node: PeerId, id: MessageId, size: u64, now: SimTime) {
        let stat = self.messages.entry(id).or_insert_with(|| MsgStat {
            origin: node,
            size,
            created_at: now,
            aborted_at: None,
            first_delivered: BTreeMap::new(),
            holder_bits: BTreeMap::new(),
        });
        *stat.holder_bits.entry(node).or_insert(0) |= HOLDS_VALIDATED;
    }

    /// A client removed a message from its validated pool. Removal by the
    /// origin is the abort that ends the delivery obligation.
    pub fn on_validated_remove(&mut self, node: PeerId, id: MessageId, now: SimTime) {
        if let Some(stat) = self.messages.get_mut(&id) {
            if let Some(bits) = stat.holder_bits.get_mut(&node) {
                *bits &= !HOLDS_VALIDATED;
            }
            if stat.origin == node && stat.aborted_at.is_none() {
                stat.aborted_at = Some(now);
            }
        }
    }

    /// A payload entered a node's unvalidated pool. First arrival per
    /// receiver counts as the delivery: it promotes the payload bytes from
    /// the duplicate bucket to goodput and records latency.
    pub fn on_pool_insert(&mut self, node: PeerId, id: MessageId, size: u64, now: SimTime) {
        let first = self.delivered_once.insert((node, id));
        if first {
            let c = &mut self.nodes[node.index()];
            c.deliveries += 1;
            let b = &mut c.bytes;
            debug_assert!(b.recv_dup_payload >= size);
            b.recv_dup_payload -= size;
            b.recv_unique_payload += size;
        }
        if let Some(stat) = self.messages.get_mut(&id) {
            *stat.holder_bits.entry(node).or_insert(0) |= HOLDS_UNVALIDATED;
            if first {
                stat.first_delivered.insert(node, now);
                self.latencies_ms.push(now.saturating_sub(stat.created_at));
            }
        }
    }

    pub fn on_pool_remove(&mut self, node: PeerId, id: MessageId) {
        if let Some(stat) = self.messages.get_mut(&id) {
            if let Some(bits) = stat.holder_bits.get_mut(&node) {
                *bits &= !HOLDS_UNVALIDATED;
            }
        }
    }

    /// Crash: the node's unvalidated pool is gone; its validated pool is
    /// persisted and survives.
    pub fn on_node_wipe(&mut self, node: PeerId) {
        for stat in self.messages.values_mut() {
            if let Some(bits) = stat.holder_bits.get_mut(&node) {
                *bits &= !HOLDS_UNVALIDATED;
            }
        }
    }

    // --- error and progress counters ---------------------------------------

    pub fn protocol_violation(&mut self, node: PeerId) {
        self.nodes[node.index()].protocol_violations += 1;
    }

    pub fn rate_limited(&mut self, node: PeerId) {
        self.nodes[node.index()].rate_limited += 1;
    }

    pub fn capacity_error(&mut self, node: PeerId) {
        self.nodes[node.index()].capacity_errors += 1;
    }

    pub fn action_error(&mut self, node: PeerId) {
        self.nodes[node.index()].action_errors += 1;
    }

    pub fn pool_refusal(&mut self, node: PeerId) {
        self.nodes[node.index()].pool_refusals += 1;
    }

    pub fn drive_call(&mut self, node: PeerId, from_tick: bool, now: SimTime) {
        let c = &mut self.nodes[node.index()];
        c.drive_calls += 1;
        if from_tick {
            c.tick_drive_calls += 1;
            self.tick_drive_times[node.index()].push(now);
        }
    }

    pub fn note_tracked(&mut self, node: PeerId, gauge: u64) {
        let c = &mut self.nodes[node.index()];
        if gauge > c.max_tracked_hwm {
            c.max_tracked_hwm = gauge;
        }
    }

    // --- aggregate views ----------------------------------------------------

    pub fn delivered_count(&self) -> u64 {
        self.nodes.iter().map(|c| c.deliveries).sum()
    }

    pub fn latency_max_ms(&self) -> Option<u64> {
        self.latencies_ms.iter().copied().max()
    }

    pub fn totals(&self) -> ByteCounters {
        let mut t = ByteCounters::default();
        for c in &self.nodes {
            let b = &c.bytes;
            t.sent_total += b.sent_total;
            t.sent_payload += b.sent_payload;
            t.sent_advert += b.sent_advert;
            t.sent_pull += b.sent_pull;
            t.sent_overhead += b.sent_overhead;
            t.recv_total += b.recv_total;
            t.recv_unique_payload += b.recv_unique_payload;
            t.recv_dup_payload += b.recv_dup_payload;
            t.recv_advert += b.recv_advert;
            t.recv_pull += b.recv_pull;
            t.recv_overhead += b.recv_overhead;
        }
        t
    }

    /// Exact byte-conservation identities: per-node sent and received
    /// partitions, and globally `sent == received + lost`.
    pub fn conservation(&self) -> (bool, String) {
        let mut ok = true;
        let mut detail = String::new();
        for (i, c) in self.nodes.iter().enumerate() {
            if !c.bytes.sent_partition_ok() {
                ok = false;
                detail.push_str(&format!("node {i}: sent partition broken; "));
            }
            if !c.bytes.recv_partition_ok() {
                ok = false;
                detail.push_str(&format!("node {i}: recv partition broken; "));
            }
        }
        let t = self.totals();
        if t.sent_total != t.recv_total + self.lost_bytes {
            ok = false;
            detail.push_str(&format!(
                "global: sent {} != received {} + lost {}",
                t.sent_total, t.recv_total, self.lost_bytes
            ));
        }
        if ok {
            detail.push_str("exact");
        }
        (ok, detail)
    }
}

/// One CSV row; `summary` rows reuse the shape with final values.
#[derive(Clone, Debug)]
pub struct SampleRow {
    pub time_ms: SimTime,
    pub total_missing: u64,
    pub avg_missing: f64,
    pub delivered: u64,
    pub latency_max_ms: u64,
    pub totals: ByteCounters,
    pub lost_bytes: u64,
    pub protocol_violations: u64,
    pub rate_limited: u64,
    pub capacity_errors: u64,
    pub drive_calls: u64,
    pub max_tracked: u64,
    pub per_node_missing: Vec<u64>,
    pub per_node_tracked: Vec<u64>,
}

pub fn csv_header(n: u32) -> String {
    let mut h = String::from(
        "record,time_ms,avg_missing,total_missing,delivered,latency_max_ms,\
         bytes_sent,sent_payload_bytes,sent_advert_bytes,sent_pull_bytes,sent_overhead_bytes,\
         bytes_received,unique_payload_bytes,duplicate_payload_bytes,recv_advert_bytes,\
         recv_pull_bytes,recv_overhead_bytes,lost_bytes,protocol_violations,rate_limited,\
         capacity_errors,drive_calls,max_tracked",
    );
    for i in 0..n {
        h.push_str(&format!(",missing_n{i}"));
    }
    for i in 0..n {
        h.push_str(&format!(",tracked_n{i}"));
    }
    h
}

fn csv_row(record: &str, row: &SampleRow) -> String {
    let t = &row.totals;
    let mut line = format!(
        "{record},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        row.time_ms,
        row.avg_missing,
        row.total_missing,
        row.delivered,
        row.latency_max_ms,
        t.sent_total,
        t.sent_payload,
        t.sent_advert,
        t.sent_pull,
        t.sent_overhead,
        t.recv_total,
        t.recv_unique_payload,
        t.recv_dup_payload,
        t.recv_advert,
        t.recv_pull,
        t.recv_overhead,
        row.lost_bytes,
        row.protocol_violations,
        row.rate_limited,
        row.capacity_errors,
        row.drive_calls,
        row.max_tracked,
    );
    for m in &row.per_node_missing {
        line.push_str(&format!(",{m}"));
    }
    for g in &row.per_node_tracked {
        line.push_str(&format!(",{g}"));
    }
    line
}

pub fn render_csv(n: u32, samples: &[SampleRow], summary: &SampleRow) -> String {
    let mut out = csv_header(n);
    out.push('\n');
    for row in samples {
        out.push_str(&csv_row("sample", row));
        out.push('\n');
    }
    out.push_str(&csv_row("summary", summary));
    out.push('\n');
    out
}
