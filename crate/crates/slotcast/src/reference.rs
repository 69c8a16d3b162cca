//! Minimal slot-table synchronization over authenticated unreliable channels.
//!
//! A sender owns a fixed array of `capacity` versioned slots and one global
//! version counter. `broadcast` writes a message into the lowest free slot
//! under a fresh version and announces it to every peer; `abort` frees the
//! slot under a fresh version and announces nothing — the freed slot is
//! simply overwritten by whatever occupies it next. Receivers keep one table
//! per sender and accept an update only if its version beats the one stored
//! for that slot, so duplicated and reordered datagrams are harmless. The
//! periodic retransmission of all occupied slots makes delivery of
//! never-aborted messages survive arbitrary (sub-1) loss, while memory stays
//! pinned at `capacity` entries per table.
//!
//! This module is deliberately small: it is used standalone and as the
//! correctness oracle for the full engine in `crate::engine`.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::types::{Message, MessageId, PeerId, SlotContent, SlotIndex, SlotUpdate, Version};

/// One send-side slot: free iff `message` is `None`. The version records the
/// last write, whether that write stored or cleared a message.
#[derive(Clone, Debug, Default)]
pub struct SendSlot {
    pub version: Version,
    pub message: Option<Message>,
}

/// Send side of the algorithm: the global version counter plus the slot array.
#[derive(Clone, Debug)]
pub struct SendTable {
    version_counter: Version,
    slots: Vec<SendSlot>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SlotTableError {
    /// Every slot is occupied; the client broke its active-message bound.
    CapacityExhausted,
    /// `abort` for a message that occupies no slot.
    UnknownMessage(MessageId),
    /// `broadcast` for a message already occupying a slot.
    DuplicateMessage(MessageId),
}

impl fmt::Display for SlotTableError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotTableError::CapacityExhausted => write!(f, "no free slot"),
            SlotTableError::UnknownMessage(id) => write!(f, "message {id} occupies no slot"),
            SlotTableError::DuplicateMessage(id) => {
                write!(f, "message {id} already occupies a slot")
            }
        }
    }
}

impl SendTable {
    pub fn new(capacity: u32) -> SendTable {
        SendTable {
            version_counter: Version::ZERO,
            slots: alloc::vec![SendSlot::default(); capacity as usize],
        }
    }

    pub fn capacity(&self) -> u32 {
        self.slots.len() as u32
    }

    pub fn version_counter(&self) -> Version {
        self.version_counter
    }

    pub fn slot(&self, index: SlotIndex) -> &SendSlot {
        &self.slots[index.offset()]
    }

    pub fn occupied_count(&self) -> u32 {
        self.slots.iter().filter(|s| s.message.is_some()).count() as u32
    }

    pub fn is_full(&self) -> bool {
        self.slots.iter().all(|s| s.message.is_some())
    }

    /// Slot currently holding `id`, if any.
    pub fn find(&self, id: &MessageId) -> Option<SlotIndex> {
        self.slots
            .iter()
            .position(|s| s.message.as_ref().is_some_and(|m| m.id() == *id))
            .map(|i| SlotIndex::new(i as u32 + 1).unwrap())
    }

    /// Store `message` in the lowest free slot under a fresh version.
    pub fn broadcast(
        &mut self,
        message: Message,
    ) -> Result<(SlotIndex, Version), SlotTableError> {
        if self.find(&message.id()).is_some() {
            return Err(SlotTableError::DuplicateMessage(message.id()));
        }
        let free = self
            .slots
            .iter()
            .position(|s| s.message.is_none())
            .ok_or(SlotTableError::CapacityExhausted)?;
        self.version_counter = self.version_counter.next();
        self.slots[free] = SendSlot {
            version: self.version_counter,
            message: Some(message),
        };
        Ok((
            SlotIndex::new(free as u32 + 1).unwrap(),
            self.version_counter,
        ))
    }

    /// Free the slot holding `id` under a fresh version. Aborts are never
    /// announced; the new version only matters once the slot is reused.
    pub fn abort(&mut self, id: &MessageId) -> Result<(SlotIndex, Version), SlotTableError> {
        let slot = self
            .find(id)
            .ok_or(SlotTableError::UnknownMessage(*id))?;
        self.version_counter = self.version_counter.next();
        self.slots[slot.offset()] = SendSlot {
            version: self.version_counter,
            message: None,
        };
        Ok((slot, self.version_counter))
    }

    /// Occupied slots in index order.
    pub fn occupied(&self) -> impl Iterator<Item = (SlotIndex, Version, &Message)> {
        self.slots.iter().enumerate().filter_map(|(i, s)| {
            s.message
                .as_ref()
                .map(|m| (SlotIndex::new(i as u32 + 1).unwrap(), s.version, m))
        })
    }

    /// Occupied-slot versions are pairwise distinct and never ahead of the
    /// counter, and occupancy never exceeds capacity.
    pub fn check_invariants(&self) -> bool {
        let occupied: Vec<Version> = self
            .slots
            .iter()
            .filter(|s| s.message.is_some())
            .map(|s| s.version)
            .collect();
        let mut sorted = occupied.clone();
        sorted.sort_unstable();
        sorted.dedup();
        sorted.len() == occupied.len()
            && occupied.iter().all(|v| *v <= self.version_counter)
            && occupied.len() <= self.slots.len()
    }
}

/// One receive-side slot; versions start at zero so the first update for a
/// slot always wins.
#[derive(Clone, Debug, Default)]
pub struct RecvSlot {
    pub version: Version,
    pub message: Option<Message>,
}

/// Receive-side tables, one per sender, each bounded by the shared capacity.
#[derive(Clone, Debug)]
pub struct RecvTables {
    capacity: u32,
    tables: BTreeMap<PeerId, Vec<RecvSlot>>,
}

/// A `deliver(sender, message)` event surfaced to the client.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub sender: PeerId,
    pub message: Message,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ReceiveError {
    /// Slot index outside `[1, capacity]`: only a malicious or broken peer
    /// sends this. Dropped and counted by callers.
    SlotOutOfRange { slot: SlotIndex, capacity: u32 },
}

impl fmt::Display for ReceiveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReceiveError::SlotOutOfRange { slot, capacity } => {
                write!(f, "slot {slot} outside [1, {capacity}]")
            }
        }
    }
}

impl RecvTables {
    pub fn new(capacity: u32) -> RecvTables {
        RecvTables {
            capacity,
            tables: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    /// Apply one incoming update. Returns a delivery iff the version beats
    /// the one stored for `(sender, slot)`; stale and duplicate updates
    /// change nothing.
    pub fn on_receive(
        &mut self,
        sender: PeerId,
        slot: SlotIndex,
        version: Version,
        message: Message,
    ) -> Result<Option<Delivery>, ReceiveError> {
        if !slot.in_range(self.capacity) {
            return Err(ReceiveError::SlotOutOfRange {
                slot,
                capacity: self.capacity,
            });
        }
        let table = self
            .tables
            .entry(sender)
            .or_insert_with(|| alloc::vec![RecvSlot::default(); self.capacity as usize]);
        let entry = &mut table[slot.offset()];
        if version > entry.version {
            entry.version = version;
            entry.message = Some(message.clone());
            Ok(Some(Delivery { sender, message }))
        } else {
            Ok(None)
        }
    }

    pub fn slot(&self, sender: PeerId, slot: SlotIndex) -> Option<&RecvSlot> {
        self.tables.get(&sender).map(|t| &t[slot.offset()])
    }

    pub fn senders(&self) -> impl Iterator<Item = PeerId> + '_ {
        self.tables.keys().copied()
    }

    /// Total stored entries, bounded by `capacity` per sender.
    pub fn entry_count(&self) -> usize {
        self.tables
            .values()
            .map(|t| t.iter().filter(|s| s.message.is_some()).count())
            .sum()
    }
}

/// A full reference participant: send table, receive tables, and the peer
/// list to announce to.
#[derive(Clone, Debug)]
pub struct ReferenceNode {
    pub me: PeerId,
    pub peers: Vec<PeerId>,
    pub send: SendTable,
    pub recv: RecvTables,
}

impl ReferenceNode {
    pub fn new(me: PeerId, peers: Vec<PeerId>, capacity: u32) -> ReferenceNode {
        ReferenceNode {
            me,
            peers,
            send: SendTable::new(capacity),
            recv: RecvTables::new(capacity),
        }
    }

    fn update_for(&self, slot: SlotIndex, version: Version, message: &Message) -> SlotUpdate {
        SlotUpdate {
            sender: self.me,
            slot,
            version,
            content: SlotContent::Full(message.clone()),
        }
    }

    /// Broadcast: store locally and emit one update per peer.
    pub fn broadcast(
        &mut self,
        message: Message,
    ) -> Result<(SlotIndex, Version, Vec<(PeerId, SlotUpdate)>), SlotTableError> {
        let (slot, version) = self.send.broadcast(message.clone())?;
        let out = self
            .peers
            .iter()
            .map(|&p| (p, self.update_for(slot, version, &message)))
            .collect();
        Ok((slot, version, out))
    }

    /// Abort: free the slot, announce nothing.
    pub fn abort(&mut self, id: &MessageId) -> Result<(SlotIndex, Version), SlotTableError> {
        self.send.abort(id)
    }

    /// Periodic retransmission: one update per occupied slot per peer; freed
    /// slots emit nothing, so only the latest content of each slot ever
    /// travels again.
    pub fn retransmit(&self) -> Vec<(PeerId, SlotUpdate)> {
        let mut out = Vec::new();
        for &peer in &self.peers {
            for (slot, version, message) in self.send.occupied() {
                out.push((peer, self.update_for(slot, version, message)));
            }
        }
        out
    }

    pub fn on_receive(
        &mut self,
        sender: PeerId,
        slot: SlotIndex,
        version: Version,
        message: Message,
    ) -> Result<Option<Delivery>, ReceiveError> {
        self.recv.on_receive(sender, slot, version, message)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::message_id;
    use alloc::vec;

    fn msg(tag: &str) -> Message {
        Message::new(tag.as_bytes())
    }

    fn slot(k: u32) -> SlotIndex {
        SlotIndex::new(k).unwrap()
    }

    #[test]
    fn first_broadcast_lands_in_slot_one() {
        let mut table = SendTable::new(5);
        let (s, v) = table.broadcast(msg("A")).unwrap();
        assert_eq!((s, v), (slot(1), Version(1)));
        assert!(table.check_invariants());
    }

    /// The worked trace: D ends up at (slot 4, version 6) and F is announced
    /// at (slot 4, version 9).
    fn worked_trace(table: &mut SendTable) {
        table.broadcast(msg("A")).unwrap(); // slot 1, v1
        table.broadcast(msg("B")).unwrap(); // slot 2, v2
        table.broadcast(msg("C")).unwrap(); // slot 3, v3
        table.broadcast(msg("D0")).unwrap(); // slot 4, v4
        table.abort(&msg("D0").id()).unwrap(); // slot 4 freed, v5
        let (s, v) = table.broadcast(msg("D")).unwrap();
        assert_eq!((s, v), (slot(4), Version(6)));
        table.broadcast(msg("E")).unwrap(); // slot 5, v7
        table.abort(&msg("D").id()).unwrap(); // slot 4 freed, v8
    }

    #[test]
    fn worked_trace_reuses_slot_four_at_version_nine() {
        let mut table = SendTable::new(5);
        worked_trace(&mut table);
        let (s, v) = table.broadcast(msg("F")).unwrap();
        assert_eq!((s, v), (slot(4), Version(9)));
        assert!(table.check_invariants());
    }

    #[test]
    fn broadcast_on_full_table_is_a_capacity_error() {
        let mut table = SendTable::new(3);
        for tag in ["A", "B", "C"] {
            table.broadcast(msg(tag)).unwrap();
        }
        assert_eq!(
            table.broadcast(msg("X")),
            Err(SlotTableError::CapacityExhausted)
        );
    }

    #[test]
    fn duplicate_broadcast_is_rejected() {
        let mut table = SendTable::new(3);
        table.broadcast(msg("A")).unwrap();
        assert_eq!(
            table.broadcast(msg("A")),
            Err(SlotTableError::DuplicateMessage(msg("A").id()))
        );
    }

    #[test]
    fn abort_frees_the_slot_under_a_fresh_version() {
        let mut table = SendTable::new(5);
        table.broadcast(msg("A")).unwrap();
        let (s, v) = table.abort(&msg("A").id()).unwrap();
        assert_eq!((s, v), (slot(1), Version(2)));
        assert!(table.slot(slot(1)).message.is_none());
        assert_eq!(table.slot(slot(1)).version, Version(2));
        assert_eq!(table.version_counter(), Version(2));
    }

    #[test]
    fn abort_in_worked_trace_frees_slot_four_at_version_eight() {
        let mut table = SendTable::new(5);
        worked_trace(&mut table);
        assert!(table.slot(slot(4)).message.is_none());
        assert_eq!(table.slot(slot(4)).version, Version(8));
    }

    #[test]
    fn abort_of_unknown_message_errors() {
        let mut table = SendTable::new(5);
        let id = message_id(b"ghost");
        assert_eq!(table.abort(&id), Err(SlotTableError::UnknownMessage(id)));
    }

    #[test]
    fn receive_applies_newer_versions_only() {
        let mut recv = RecvTables::new(5);
        let sender = PeerId(1);
        // Preload slot 4 at version 6 (the worked trace's D state).
        assert!(recv
            .on_receive(sender, slot(4), Version(6), msg("D"))
            .unwrap()
            .is_some());
        // Newer version 9 delivers F.
        let d = recv
            .on_receive(sender, slot(4), Version(9), msg("F"))
            .unwrap()
            .unwrap();
        assert_eq!(d.message, msg("F"));
        // Stale copy of D is ignored.
        assert!(recv
            .on_receive(sender, slot(4), Version(6), msg("D"))
            .unwrap()
            .is_none());
        let stored = recv.slot(sender, slot(4)).unwrap();
        assert_eq!(stored.version, Version(9));
        assert_eq!(stored.message.as_ref().unwrap(), &msg("F"));
    }

    #[test]
    fn fresh_table_delivers_version_one() {
        let mut recv = RecvTables::new(5);
        let d = recv
            .on_receive(PeerId(2), slot(1), Version(1), msg("A"))
            .unwrap();
        assert_eq!(d.unwrap().message, msg("A"));
    }

    #[test]
    fn out_of_range_slot_is_a_protocol_violation() {
        let mut recv = RecvTables::new(5);
        let err = recv
            .on_receive(PeerId(2), slot(6), Version(1), msg("A"))
            .unwrap_err();
        assert!(matches!(err, ReceiveError::SlotOutOfRange { .. }));
    }

    #[test]
    fn retransmit_covers_exactly_the_occupied_slots() {
        let peers = vec![PeerId(1), PeerId(2)];
        let mut node = ReferenceNode::new(PeerId(0), peers, 5);
        assert!(node.retransmit().is_empty());

        // Worked trace, then B and E also aborted: A, C, F remain.
        for tag in ["A", "B", "C", "D0"] {
            node.broadcast(msg(tag)).unwrap();
        }
        node.abort(&msg("D0").id()).unwrap();
        node.broadcast(msg("D")).unwrap();
        node.broadcast(msg("E")).unwrap();
        node.abort(&msg("D").id()).unwrap();
        node.broadcast(msg("F")).unwrap();
        node.abort(&msg("B").id()).unwrap();
        node.abort(&msg("E").id()).unwrap();

        let out = node.retransmit();
        assert_eq!(out.len(), 3 * 2); // 3 occupied slots, 2 peers
        for (_, update) in &out {
            assert_ne!(update.content.id(), msg("D").id());
        }
        let f_updates: Vec<_> = out
            .iter()
            .filter(|(_, u)| u.content.id() == msg("F").id())
            .collect();
        assert_eq!(f_updates.len(), 2);
        for (_, u) in f_updates {
            assert_eq!((u.slot, u.version), (slot(4), Version(9)));
        }
    }

    #[test]
    fn full_table_retransmits_capacity_times_peers() {
        let peers = vec![PeerId(1), PeerId(2), PeerId(3)];
        let mut node = ReferenceNode::new(PeerId(0), peers, 4);
        for i in 0..4 {
            node.broadcast(Message::new(alloc::format!("m{i}").into_bytes()))
                .unwrap();
        }
        assert_eq!(node.retransmit().len(), 4 * 3);
    }
}
