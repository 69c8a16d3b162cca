//! Event queue vocabulary for the discrete-event simulator.

use core::cmp::Ordering;

use crate::types::{MessageId, PeerId, SimTime, SlotUpdate, TaskKey};
use crate::wire::Frame;

/// Timers a node can arm for itself. Fired back into the node unless it
/// crashed or restarted in between (epoch guard).
#[derive(Clone, Debug)]
pub enum TimerKind {
    /// Client event-loop tick.
    Tick,
    /// Periodic poll of transport connection ids.
    ConnIdCheck,
    /// Backoff deadline of a failed send task.
    RetryTask(TaskKey),
    /// Deadline of an outstanding pull; `epoch` pins the attempt it guards.
    DownloadTimeout { id: MessageId, epoch: u64 },
    /// Pacing timer for adversarial traffic generators.
    AdversaryStep,
    /// Periodic full retransmission sweep, reference algorithm only.
    ReferenceRetransmit,
}

#[derive(Clone, Debug)]
pub enum EventKind {
    /// Reliable-mode frame arrival. Ignored unless the frame is still
    /// tracked by the connection it was sent on.
    DeliverFrame {
        src: PeerId,
        dst: PeerId,
        frame_seq: u64,
        frame: Frame,
    },
    /// Unreliable-mode datagram arrival (survived the drop roll).
    DeliverDatagram {
        src: PeerId,
        dst: PeerId,
        update: SlotUpdate,
    },
    Timer {
        node: PeerId,
        epoch: u64,
        kind: TimerKind,
    },
    /// Transport-reported loss of an in-flight slot update.
    SendFailed {
        node: PeerId,
        epoch: u64,
        key: TaskKey,
    },
    /// The connection to `peer` broke.
    ConnDown {
        node: PeerId,
        epoch: u64,
        peer: PeerId,
    },
    LinkDown { a: PeerId, b: PeerId },
    LinkUp { a: PeerId, b: PeerId },
    /// All links touching `node` go down/up (node-level connectivity fault).
    NodeLinksDown { node: PeerId },
    NodeLinksUp { node: PeerId },
    Crash { node: PeerId },
    Restart { node: PeerId },
    /// Attempt to (re)establish the connection between two peers.
    Establish { a: PeerId, b: PeerId },
    /// Metrics sampling point, handled by the runner.
    Sample,
    /// End of the simulated run.
    End,
}

/// Queue entry ordered by `(fire_at, seq)`; `seq` is unique, so two events
/// scheduled for the same instant fire in submission order.
#[derive(Debug)]
pub struct SimEvent {
    pub fire_at: SimTime,
    pub seq: u64,
    pub kind: EventKind,
}

impl PartialEq for SimEvent {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl Eq for SimEvent {}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want the earliest event.
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}
