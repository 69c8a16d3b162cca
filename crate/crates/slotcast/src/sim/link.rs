//! Link and connection state: latency/bandwidth/loss per directed pair, and
//! the connection-id machinery the engine's recovery path keys off.

use alloc::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::types::{PeerId, SimTime, TaskKey};

/// Behaviour of one directed link.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct LinkModel {
    pub one_way_latency_ms: u64,
    /// Serialization rate; `None` models an infinitely fast link.
    pub bandwidth_bytes_per_ms: Option<u64>,
    /// Datagram loss probability (unreliable mode only; the reliable mode
    /// loses frames solely through connection breaks).
    pub drop_probability: f64,
}

impl LinkModel {
    pub fn ideal() -> LinkModel {
        LinkModel {
            one_way_latency_ms: 0,
            bandwidth_bytes_per_ms: None,
            drop_probability: 0.0,
        }
    }

    pub fn validate(&self) -> bool {
        (0.0..=1.0).contains(&self.drop_probability)
            && self.bandwidth_bytes_per_ms != Some(0)
    }

    /// Serialization delay of `bytes` on this link, rounded up.
    pub fn serialize_ms(&self, bytes: u64) -> u64 {
        match self.bandwidth_bytes_per_ms {
            Some(bw) => bytes.div_ceil(bw),
            None => 0,
        }
    }
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel::ideal()
    }
}

/// Runtime state of a directed link: the model plus fault bookkeeping.
/// `down_count` supports overlapping fault windows; the link is usable only
/// when it is zero.
#[derive(Clone, Debug)]
pub struct LinkState {
    pub model: LinkModel,
    pub down_count: u32,
    /// Serialization queue: when the previous frame finishes going out.
    pub busy_until: SimTime,
}

impl LinkState {
    pub fn new(model: LinkModel) -> LinkState {
        LinkState {
            model,
            down_count: 0,
            busy_until: 0,
        }
    }

    pub fn is_up(&self) -> bool {
        self.down_count == 0
    }
}

/// A frame handed to the transport but not yet delivered. Dropped (and the
/// sender notified, when a task is attached) if the connection breaks first.
#[derive(Clone, Debug)]
pub struct InFlight {
    pub src: PeerId,
    pub dst: PeerId,
    pub bytes: u64,
    pub notify: Option<TaskKey>,
}

/// Connection between an unordered peer pair. Each direction carries its own
/// connection-id counter, incremented on every (re)establishment and never
/// reused; a node observing a higher id than it last saw knows the previous
/// connection (and anything in flight on it) is gone.
#[derive(Clone, Debug, Default)]
pub struct ConnState {
    pub up: bool,
    pub id_lo_to_hi: u64,
    pub id_hi_to_lo: u64,
    pub inflight: BTreeMap<u64, InFlight>,
}

impl ConnState {
    pub fn direction_id(&self, src: PeerId, dst: PeerId) -> u64 {
        if src < dst {
            self.id_lo_to_hi
        } else {
            debug_assert!(dst < src);
            self.id_hi_to_lo
        }
    }
}

/// Normalized key for the connection map.
pub fn pair_key(a: PeerId, b: PeerId) -> (PeerId, PeerId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}
