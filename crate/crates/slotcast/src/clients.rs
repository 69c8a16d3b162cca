//! Pluggable client state machines.
//!
//! A client is driven by the engine's event loop: once per timer tick and
//! once per unvalidated-pool change. Each drive call returns change actions
//! for the validated pool; the client also supplies the bouncer that decides
//! which advertised messages are worth downloading. `drive` must not block —
//! in the simulator it cannot, and the contract is kept explicit here.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::engine::update::{UnvalidatedPool, ValidatedPool};
use crate::sim::derive_rng;
use crate::types::{ChangeAction, Message, MessageId, PeerId, SimTime};

/// Why the engine is invoking `drive`.
#[derive(Clone, Copy, Debug)]
pub enum DriveTrigger<'a> {
    /// Periodic tick, fired even with no peer traffic so the client can
    /// produce new messages.
    Tick,
    /// The unvalidated pool changed.
    PoolDelta {
        added: &'a [MessageId],
        removed: &'a [MessageId],
    },
}

pub trait Client {
    fn drive(
        &mut self,
        now: SimTime,
        validated: &ValidatedPool,
        unvalidated: &UnvalidatedPool,
        trigger: DriveTrigger<'_>,
        out: &mut Vec<ChangeAction>,
    );

    /// Bouncer: is this advertised message worth downloading right now?
    /// Re-evaluated over time, so "reject now" is not "reject forever".
    fn accepts(
        &self,
        now: SimTime,
        id: &MessageId,
        size: u64,
        validated: &ValidatedPool,
    ) -> bool;
}

/// Bouncer behaviours available to scenario files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BouncerConfig {
    #[default]
    AcceptAll,
    /// Accept nothing before the given instant, everything after.
    AcceptAfter {
        after_ms: u64,
    },
    /// Reject a fixed id set (hex digests), accept the rest.
    RejectIds {
        ids: Vec<String>,
    },
}

/// Workload description for one mock client.
///
/// The generator produces `message_size`-byte messages at `rate_per_sec`
/// (until `stop_after_ms` / `max_count`), aborts each one `abort_after_ms`
/// after creation when set, and can relay: any message that lands in the
/// unvalidated pool is copied into the validated pool and re-broadcast.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockClientConfig {
    pub message_size: u64,
    pub rate_per_sec: f64,
    pub stop_after_ms: Option<u64>,
    pub max_count: Option<u64>,
    pub abort_after_ms: Option<u64>,
    /// Emit this many adds on the first tick, regardless of capacity.
    pub burst: Option<u32>,
    pub relay: bool,
    pub push_directly: bool,
    pub bouncer: BouncerConfig,
}

impl MockClientConfig {
    pub fn generates(&self) -> bool {
        (self.rate_per_sec > 0.0 && self.message_size > 0) || self.burst.is_some()
    }
}

/// Deterministic payload for message number `seq` of `node`: unique with
/// overwhelming probability, reproducible across runs of the same seed.
pub fn generated_payload(seed: u64, node: PeerId, seq: u64, size: u64) -> Vec<u8> {
    let mut rng = derive_rng(seed, 0x6d6f636b ^ node.0 as u64, seq);
    let mut payload = alloc::vec![0u8; size as usize];
    rng.fill_bytes(&mut payload);
    payload
}

pub struct MockClient {
    node: PeerId,
    seed: u64,
    cfg: MockClientConfig,
    reject_ids: Vec<MessageId>,
    emitted: u64,
    burst_done: bool,
    /// Own creations pending abort, oldest first.
    own: VecDeque<(SimTime, MessageId)>,
}

impl MockClient {
    pub fn new(node: PeerId, seed: u64, cfg: MockClientConfig) -> MockClient {
        let reject_ids = match &cfg.bouncer {
            BouncerConfig::RejectIds { ids } => ids
                .iter()
                .filter_map(|hex| parse_hex_id(hex))
                .collect(),
            _ => Vec::new(),
        };
        MockClient {
            node,
            seed,
            cfg,
            reject_ids,
            emitted: 0,
            burst_done: false,
            own: VecDeque::new(),
        }
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    fn next_message(&mut self) -> Message {
        let payload =
            generated_payload(self.seed, self.node, self.emitted, self.cfg.message_size.max(16));
        self.emitted += 1;
        Message::new(payload)
    }

    fn generator_target(&self, now: SimTime) -> u64 {
        let horizon = match self.cfg.stop_after_ms {
            Some(stop) => now.min(stop),
            None => now,
        };
        let mut target = (horizon as f64 * self.cfg.rate_per_sec / 1000.0) as u64;
        if let Some(cap) = self.cfg.max_count {
            target = target.min(cap);
        }
        target
    }
}

fn parse_hex_id(hex: &str) -> Option<MessageId> {
    let bytes = hex.as_bytes();
    if bytes.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, chunk) in bytes.chunks(2).enumerate() {
        let hi = (chunk[0] as char).to_digit(16)?;
        let lo = (chunk[1] as char).to_digit(16)?;
        out[i] = ((hi << 4) | lo) as u8;
    }
    Some(MessageId::from_bytes(out))
}

impl Client for MockClient {
    fn drive(
        &mut self,
        now: SimTime,
        validated: &ValidatedPool,
        unvalidated: &UnvalidatedPool,
        trigger: DriveTrigger<'_>,
        out: &mut Vec<ChangeAction>,
    ) {
        match trigger {
            DriveTrigger::Tick => {
                if let Some(burst) = self.cfg.burst {
                    if !self.burst_done {
                        self.burst_done = true;
                        for _ in 0..burst {
                            let message = self.next_message();
                            self.own.push_back((now, message.id()));
                            out.push(ChangeAction::Add {
                                message,
                                push_directly: self.cfg.push_directly,
                            });
                        }
                    }
                }
                if self.cfg.rate_per_sec > 0.0 && self.cfg.message_size > 0 {
                    let target = self.generator_target(now);
                    while self.emitted < target {
                        let message = self.next_message();
                        self.own.push_back((now, message.id()));
                        out.push(ChangeAction::Add {
                            message,
                            push_directly: self.cfg.push_directly,
                        });
                    }
                }
                if let Some(lifetime) = self.cfg.abort_after_ms {
                    while let Some((created, id)) = self.own.front().copied() {
                        if now < created + lifetime {
                            break;
                        }
                        self.own.pop_front();
                        // Skip adds the engine refused (capacity errors).
                        if validated.contains(&id) {
                            out.push(ChangeAction::Remove { id });
                        }
                    }
                }
            }
            DriveTrigger::PoolDelta { added, .. } => {
                if self.cfg.relay {
                    for id in added {
                        if validated.contains(id) {
                            continue;
                        }
                        if let Some(message) = unvalidated.get(id) {
                            out.push(ChangeAction::Add {
                                message: message.clone(),
                                push_directly: self.cfg.push_directly,
                            });
                        }
                    }
                }
            }
        }
    }

    fn accepts(
        &self,
        now: SimTime,
        id: &MessageId,
        _size: u64,
        validated: &ValidatedPool,
    ) -> bool {
        if self.cfg.relay && validated.contains(id) {
            // A relay already holds (and re-advertises) it; no point pulling.
            return false;
        }
        match &self.cfg.bouncer {
            BouncerConfig::AcceptAll => true,
            BouncerConfig::AcceptAfter { after_ms } => now >= *after_ms,
            BouncerConfig::RejectIds { .. } => !self.reject_ids.contains(id),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drive_ticks(client: &mut MockClient, upto_ms: SimTime, step: SimTime) -> Vec<ChangeAction> {
        let validated = ValidatedPool::new(1000);
        let unvalidated = UnvalidatedPool::new(1000, true);
        let mut out = Vec::new();
        let mut t = step;
        while t <= upto_ms {
            client.drive(t, &validated, &unvalidated, DriveTrigger::Tick, &mut out);
            t += step;
        }
        out
    }

    #[test]
    fn one_per_second_for_ten_seconds_adds_ten() {
        let cfg = MockClientConfig {
            message_size: 64,
            rate_per_sec: 1.0,
            ..MockClientConfig::default()
        };
        let mut client = MockClient::new(PeerId(0), 7, cfg);
        let actions = drive_ticks(&mut client, 10_000, 200);
        assert_eq!(actions.len(), 10);
        assert!(actions
            .iter()
            .all(|a| matches!(a, ChangeAction::Add { .. })));
    }

    #[test]
    fn abort_after_keeps_steady_state_at_rate_times_lifetime() {
        let cfg = MockClientConfig {
            message_size: 64,
            rate_per_sec: 1.0,
            abort_after_ms: Some(3000),
            ..MockClientConfig::default()
        };
        let mut client = MockClient::new(PeerId(0), 7, cfg);
        // Track adds/removes through a validated-pool mirror.
        let mut pool = ValidatedPool::new(1000);
        let unvalidated = UnvalidatedPool::new(1000, true);
        let mut t = 200;
        while t <= 20_000 {
            let mut out = Vec::new();
            client.drive(t, &pool, &unvalidated, DriveTrigger::Tick, &mut out);
            for action in out {
                match action {
                    ChangeAction::Add { message, .. } => {
                        pool.insert(message, false, t).unwrap();
                    }
                    ChangeAction::Remove { id } => {
                        pool.remove(&id).unwrap();
                    }
                }
            }
            if t >= 5_000 {
                assert_eq!(pool.len(), 3, "steady state at t={t}");
            }
            t += 200;
        }
    }

    #[test]
    fn generated_payloads_are_unique_per_node_and_seq() {
        let a = generated_payload(1, PeerId(0), 0, 64);
        let b = generated_payload(1, PeerId(0), 1, 64);
        let c = generated_payload(1, PeerId(1), 0, 64);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, generated_payload(1, PeerId(0), 0, 64));
    }

    #[test]
    fn accept_after_bouncer_flips_at_the_threshold() {
        let cfg = MockClientConfig {
            bouncer: BouncerConfig::AcceptAfter { after_ms: 5000 },
            ..MockClientConfig::default()
        };
        let client = MockClient::new(PeerId(0), 7, cfg);
        let validated = ValidatedPool::new(8);
        let id = crate::types::message_id(b"m");
        assert!(!client.accepts(4999, &id, 100, &validated));
        assert!(client.accepts(5000, &id, 100, &validated));
    }
}
