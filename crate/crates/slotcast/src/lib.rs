//! Bounded-memory abortable broadcast over slot tables.
//!
//! Broadcast with an explicit `abort` operation: delivery is guaranteed only
//! for messages the sender has not aborted, which is what makes every data
//! structure in the protocol boundable even against malicious peers. The crate
//! provides three layers:
//!
//! - [`reference`]: the minimal slot-table synchronization algorithm over
//!   authenticated unreliable channels. Small enough to audit, used as the
//!   correctness oracle for the full engine.
//! - [`engine`]: the production-shaped engine — send tasks with backoff,
//!   advert/pull dissemination with per-message download deduplication, a
//!   bounded unvalidated pool, and connection-id based crash/reconnect
//!   recovery.
//! - [`sim`] + [`runner`]: a deterministic discrete-event network simulator
//!   (latency, bandwidth, loss, partitions, crash/restart) and a scenario
//!   runner that drives whole peer groups and collects metrics.
//!
//! The crate is `no_std` + `alloc`; all IO (scenario files, CSV output, CLI)
//! lives in the companion `slotcast-sim` crate.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod adversary;
pub mod clients;
pub mod engine;
pub mod metrics;
pub mod reference;
pub mod runner;
pub mod scenario;
pub mod sim;
pub mod types;
pub mod wire;

pub use types::{
    Advert, ChangeAction, EngineConfig, EngineMode, Message, MessageId, PeerId, SlotContent,
    SlotIndex, SlotUpdate, Version,
};
