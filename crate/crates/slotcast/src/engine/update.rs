//! The two message pools.
//!
//! The validated pool is client-owned: bounded by the slot capacity, driven
//! only by the client's change actions, and persisted across crashes. The
//! unvalidated pool is engine-owned: it holds payloads obtained from peers,
//! every entry is pinned by a live download task, and entries vanish the
//! moment no peer advertises them anymore.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::types::{Message, MessageId, SimTime};

#[derive(Clone, Debug)]
pub struct PoolEntry {
    pub message: Message,
    pub push_directly: bool,
    pub added_at: SimTime,
    seq: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PoolError {
    /// The pool already holds `capacity` messages; the add is refused
    /// without blocking anything.
    Capacity,
    Duplicate(MessageId),
}

impl fmt::Display for PoolError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoolError::Capacity => write!(f, "validated pool at capacity"),
            PoolError::Duplicate(id) => write!(f, "message {id} already in pool"),
        }
    }
}

/// Client-owned pool of messages to broadcast, bounded by the slot capacity.
#[derive(Clone, Debug)]
pub struct ValidatedPool {
    capacity: u32,
    next_seq: u64,
    entries: BTreeMap<MessageId, PoolEntry>,
}

impl ValidatedPool {
    pub fn new(capacity: u32) -> ValidatedPool {
        ValidatedPool {
            capacity,
            next_seq: 0,
            entries: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &MessageId) -> bool {
        self.entries.contains_key(id)
    }

    pub fn get(&self, id: &MessageId) -> Option<&PoolEntry> {
        self.entries.get(id)
    }

    pub fn insert(
        &mut self,
        message: Message,
        push_directly: bool,
        now: SimTime,
    ) -> Result<(), PoolError> {
        if self.entries.contains_key(&message.id()) {
            return Err(PoolError::Duplicate(message.id()));
        }
        if self.entries.len() as u32 >= self.capacity {
            return Err(PoolError::Capacity);
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.entries.insert(
            message.id(),
            PoolEntry {
                message,
                push_directly,
                added_at: now,
                seq,
            },
        );
        Ok(())
    }

    pub fn remove(&mut self, id: &MessageId) -> Option<PoolEntry> {
        self.entries.remove(id)
    }

    /// Entries in insertion order; the restart bootstrap rebroadcasts in
    /// this order so replays are stable.
    pub fn in_insertion_order(&self) -> Vec<&PoolEntry> {
        let mut v: Vec<&PoolEntry> = self.entries.values().collect();
        v.sort_by_key(|e| e.seq);
        v
    }

    pub fn ids(&self) -> impl Iterator<Item = &MessageId> {
        self.entries.keys()
    }
}

/// Engine-owned pool of downloaded-but-not-yet-validated payloads.
#[derive(Clone, Debug)]
pub struct UnvalidatedPool {
    bound_entries: u64,
    enforce_bound: bool,
    entries: BTreeMap<MessageId, Message>,
    bytes: u64,
}

impl UnvalidatedPool {
    pub fn new(bound_entries: u64, enforce_bound: bool) -> UnvalidatedPool {
        UnvalidatedPool {
            bound_entries,
            enforce_bound,
            entries: BTreeMap::new(),
            bytes: 0,
        }
    }

    pub fn len(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    pub fn bound_entries(&self) -> u64 {
        self.bound_entries
    }

    pub fn contains(&self, id: &MessageId) -> bool {
        self.entries.contains_key(id)
    }

    pub fn get(&self, id: &MessageId) -> Option<&Message> {
        self.entries.get(id)
    }

    /// Refused (not evicting anything) when the entry bound is reached: the
    /// download stays pending and is retried once space frees up.
    pub fn insert(&mut self, message: Message) -> Result<(), PoolError> {
        if self.entries.contains_key(&message.id()) {
            return Err(PoolError::Duplicate(message.id()));
        }
        if self.enforce_bound && self.entries.len() as u64 >= self.bound_entries {
            return Err(PoolError::Capacity);
        }
        self.bytes += message.size();
        self.entries.insert(message.id(), message);
        Ok(())
    }

    pub fn remove(&mut self, id: &MessageId) -> Option<Message> {
        let removed = self.entries.remove(id);
        if let Some(m) = &removed {
            self.bytes -= m.size();
        }
        removed
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MessageId, &Message)> {
        self.entries.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validated_pool_enforces_capacity_and_uniqueness() {
        let mut pool = ValidatedPool::new(2);
        let a = Message::new(&b"a"[..]);
        let b = Message::new(&b"b"[..]);
        pool.insert(a.clone(), false, 0).unwrap();
        assert_eq!(
            pool.insert(a.clone(), false, 1),
            Err(PoolError::Duplicate(a.id()))
        );
        pool.insert(b, false, 2).unwrap();
        assert_eq!(
            pool.insert(Message::new(&b"c"[..]), false, 3),
            Err(PoolError::Capacity)
        );
        assert_eq!(pool.len(), 2);
    }

    #[test]
    fn insertion_order_is_stable_across_removals() {
        let mut pool = ValidatedPool::new(8);
        let msgs: Vec<Message> = (0..4u8).map(|i| Message::new([i].as_slice())).collect();
        for m in &msgs {
            pool.insert(m.clone(), false, 0).unwrap();
        }
        pool.remove(&msgs[1].id());
        let order: Vec<MessageId> =
            pool.in_insertion_order().iter().map(|e| e.message.id()).collect();
        assert_eq!(order, alloc::vec![msgs[0].id(), msgs[2].id(), msgs[3].id()]);
    }

    #[test]
    fn unvalidated_pool_tracks_bytes_and_bound() {
        let mut pool = UnvalidatedPool::new(2, true);
        pool.insert(Message::new(&b"aaaa"[..])).unwrap();
        pool.insert(Message::new(&b"bb"[..])).unwrap();
        assert_eq!(pool.bytes(), 6);
        assert_eq!(
            pool.insert(Message::new(&b"c"[..])),
            Err(PoolError::Capacity)
        );
        pool.remove(&Message::new(&b"aaaa"[..]).id());
        assert_eq!(pool.bytes(), 2);
        pool.insert(Message::new(&b"c"[..])).unwrap();
    }

    #[test]
    fn disabled_bound_admits_everything() {
        let mut pool = UnvalidatedPool::new(1, false);
        for i in 0..10u8 {
            pool.insert(Message::new([i].as_slice())).unwrap();
        }
        assert_eq!(pool.len(), 10);
    }
}
