//! Shared domain types: identities, messages, slot updates, engine config.

use alloc::sync::Arc;
use core::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Simulated time in milliseconds.
pub type SimTime = u64;

/// Identity of a node within a peer group. Stable for the node's lifetime;
/// the group is a known finite set `0..n`.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct PeerId(pub u32);

impl PeerId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Debug for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Content-derived message identity (SHA-256 of the payload bytes).
///
/// Equal payloads produce equal ids, which is what lets a message advertised
/// by several senders be downloaded once.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MessageId([u8; 32]);

impl MessageId {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        MessageId(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..8] {
            write!(f, "{:02x}", b)?;
        }
        Ok(())
    }
}

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Digest of a payload. Deterministic: the same payload always hashes to the
/// same id.
pub fn message_id(payload: &[u8]) -> MessageId {
    let digest = Sha256::digest(payload);
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    MessageId(bytes)
}

/// Per-sender version counter. One counter is shared across all slots of a
/// sender and strictly increases with every broadcast or abort; 64 bits do
/// not roll over at any realistic rate.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Debug, Serialize, Deserialize,
)]
pub struct Version(pub u64);

impl Version {
    pub const ZERO: Version = Version(0);

    pub fn next(self) -> Version {
        Version(self.0 + 1)
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// 1-based slot position within a table of capacity `C`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct SlotIndex(u32);

impl SlotIndex {
    /// Requires `k >= 1`; range against the table capacity is checked at the
    /// point of use (a malicious peer controls what arrives on the wire).
    pub fn new(k: u32) -> Option<SlotIndex> {
        if k >= 1 {
            Some(SlotIndex(k))
        } else {
            None
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn in_range(self, capacity: u32) -> bool {
        self.0 >= 1 && self.0 <= capacity
    }

    /// Zero-based offset into a slot array.
    pub fn offset(self) -> usize {
        (self.0 - 1) as usize
    }
}

impl fmt::Display for SlotIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// A broadcastable payload with its content-derived identity.
///
/// `new` computes the id from the bytes; `from_parts` trusts the caller and
/// exists for wire decoding and for modelling peers that lie about content —
/// receivers re-derive the digest before admitting anything into a pool.
#[derive(Clone, PartialEq, Eq)]
pub struct Message {
    id: MessageId,
    payload: Arc<[u8]>,
}

impl Message {
    pub fn new(payload: impl Into<Arc<[u8]>>) -> Message {
        let payload = payload.into();
        let id = message_id(&payload);
        Message { id, payload }
    }

    /// Checked constructor enforcing the configured size bound.
    pub fn bounded(
        payload: impl Into<Arc<[u8]>>,
        max_message_size: u64,
    ) -> Result<Message, MessageError> {
        let payload = payload.into();
        let size = payload.len() as u64;
        if size > max_message_size {
            return Err(MessageError::TooLarge {
                size,
                max: max_message_size,
            });
        }
        Ok(Message::new(payload))
    }

    /// Unverified (claimed id, payload) pair as read off the wire.
    pub fn from_parts(id: MessageId, payload: Arc<[u8]>) -> Message {
        Message { id, payload }
    }

    pub fn id(&self) -> MessageId {
        self.id
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn payload_arc(&self) -> Arc<[u8]> {
        self.payload.clone()
    }

    pub fn size(&self) -> u64 {
        self.payload.len() as u64
    }

    /// True iff the claimed id matches the payload digest.
    pub fn verify(&self) -> bool {
        message_id(&self.payload) == self.id
    }

    pub fn advert(&self) -> Advert {
        Advert {
            id: self.id,
            size: self.size(),
        }
    }
}

impl fmt::Debug for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Message({:?}, {}B)", self.id, self.payload.len())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MessageError {
    TooLarge { size: u64, max: u64 },
}

impl fmt::Display for MessageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MessageError::TooLarge { size, max } => {
                write!(f, "payload of {size} bytes exceeds max_message_size {max}")
            }
        }
    }
}

/// Compact announcement of an available message: id plus size, nothing else.
/// Slot and version travel in the enclosing [`SlotUpdate`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Advert {
    pub id: MessageId,
    pub size: u64,
}

/// What a slot update carries: the full payload (direct push) or just the
/// advert. Full content is used when the message is small or the client
/// flagged it for direct push.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum SlotContent {
    Full(Message),
    Advert(Advert),
}

impl SlotContent {
    pub fn id(&self) -> MessageId {
        match self {
            SlotContent::Full(m) => m.id(),
            SlotContent::Advert(a) => a.id,
        }
    }

    pub fn size(&self) -> u64 {
        match self {
            SlotContent::Full(m) => m.size(),
            SlotContent::Advert(a) => a.size,
        }
    }

    pub fn is_full(&self) -> bool {
        matches!(self, SlotContent::Full(_))
    }
}

/// One versioned slot announcement from a sender.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SlotUpdate {
    pub sender: PeerId,
    pub slot: SlotIndex,
    pub version: Version,
    pub content: SlotContent,
}

/// Client-emitted mutation of the validated pool; the engine's sole input
/// from clients. Additions broadcast, removals abort.
#[derive(Clone, Debug)]
pub enum ChangeAction {
    Add {
        message: Message,
        push_directly: bool,
    },
    Remove {
        id: MessageId,
    },
}

/// Key of a live send task: one per (peer, slot) at a pinned version.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct TaskKey {
    pub peer: PeerId,
    pub slot: SlotIndex,
    pub version: Version,
}

/// Whether the engine runs its full recovery machinery or a fire-and-forget
/// baseline (no send retries, no connection-id recovery) for comparison runs.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineMode {
    Full,
    NoRetransmit,
}

impl Default for EngineMode {
    fn default() -> Self {
        EngineMode::Full
    }
}

/// Engine tuning knobs shared by every module.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    /// Slot capacity per sender; also the client's validated-pool bound.
    pub capacity: u32,
    pub max_message_size: u64,
    /// Messages at or below this size are pushed directly in the slot update.
    #[serde(default = "default_push_threshold")]
    pub push_threshold: u64,
    #[serde(default = "default_tick_interval")]
    pub tick_interval_ms: u64,
    /// Period of the reference algorithm's full retransmission sweep. The
    /// connection-oriented engine does not retransmit periodically (reliable
    /// delivery plus connection-id recovery cover loss); the value still
    /// contributes to the bounded-delivery budget.
    #[serde(default = "default_retransmit_period")]
    pub retransmit_period_ms: u64,
    #[serde(default = "default_download_timeout")]
    pub download_timeout_ms: u64,
    #[serde(default = "default_max_streams")]
    pub max_concurrent_streams_per_peer: u32,
    #[serde(default = "default_backoff_base")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_cap")]
    pub backoff_cap_ms: u64,
    /// Unvalidated pool entry bound; defaults to `capacity * (n - 1)`.
    #[serde(default)]
    pub unvalidated_bound_entries: Option<u64>,
    #[serde(default = "default_reconnect_delay")]
    pub reconnect_delay_ms: u64,
    /// How often a node polls transport for connection-id changes.
    #[serde(default = "default_conn_id_check")]
    pub conn_id_check_period_ms: u64,
    /// Per-peer inbound slot-update budget per tick; defaults to `4 * capacity`.
    #[serde(default)]
    pub inbound_update_cap_per_tick: Option<u32>,
    #[serde(default)]
    pub mode: EngineMode,
    /// Test-only escape hatch: `false` disables the slot-range check, the
    /// inbound rate cap, and the pool entry bound, for demonstrating what an
    /// unbounded receiver looks like under flooding.
    #[serde(default = "default_true")]
    pub enforce_bounds: bool,
}

fn default_push_threshold() -> u64 {
    1024
}
fn default_tick_interval() -> u64 {
    200
}
fn default_retransmit_period() -> u64 {
    1000
}
fn default_download_timeout() -> u64 {
    1000
}
fn default_max_streams() -> u32 {
    10
}
fn default_backoff_base() -> u64 {
    100
}
fn default_backoff_cap() -> u64 {
    10_000
}
fn default_reconnect_delay() -> u64 {
    500
}
fn default_conn_id_check() -> u64 {
    2000
}
fn default_true() -> bool {
    true
}

impl EngineConfig {
    pub fn new(capacity: u32, max_message_size: u64) -> EngineConfig {
        EngineConfig {
            capacity,
            max_message_size,
            push_threshold: default_push_threshold(),
            tick_interval_ms: default_tick_interval(),
            retransmit_period_ms: default_retransmit_period(),
            download_timeout_ms: default_download_timeout(),
            max_concurrent_streams_per_peer: default_max_streams(),
            backoff_base_ms: default_backoff_base(),
            backoff_cap_ms: default_backoff_cap(),
            unvalidated_bound_entries: None,
            reconnect_delay_ms: default_reconnect_delay(),
            conn_id_check_period_ms: default_conn_id_check(),
            inbound_update_cap_per_tick: None,
            mode: EngineMode::Full,
            enforce_bounds: true,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.capacity == 0 {
            return Err(ConfigError::ZeroCapacity);
        }
        if self.tick_interval_ms == 0 {
            return Err(ConfigError::ZeroTickInterval);
        }
        if self.max_message_size == 0 {
            return Err(ConfigError::ZeroMaxMessageSize);
        }
        if self.push_threshold > self.max_message_size {
            return Err(ConfigError::ThresholdAboveMax {
                threshold: self.push_threshold,
                max: self.max_message_size,
            });
        }
        if self.download_timeout_ms == 0
            || self.retransmit_period_ms == 0
            || self.backoff_base_ms == 0
            || self.backoff_cap_ms == 0
            || self.reconnect_delay_ms == 0
            || self.conn_id_check_period_ms == 0
        {
            return Err(ConfigError::ZeroDuration);
        }
        if self.max_concurrent_streams_per_peer == 0 {
            return Err(ConfigError::ZeroStreamCap);
        }
        Ok(())
    }

    /// Entry bound of the unvalidated pool for a group of `n` nodes.
    pub fn unvalidated_bound(&self, n: u32) -> u64 {
        self.unvalidated_bound_entries
            .unwrap_or(self.capacity as u64 * (n.saturating_sub(1)) as u64)
    }

    pub fn inbound_update_cap(&self) -> u32 {
        self.inbound_update_cap_per_tick
            .unwrap_or(self.capacity.saturating_mul(4))
    }

    pub fn is_baseline(&self) -> bool {
        self.mode == EngineMode::NoRetransmit
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ConfigError {
    ZeroCapacity,
    ZeroTickInterval,
    ZeroMaxMessageSize,
    ZeroDuration,
    ZeroStreamCap,
    ThresholdAboveMax { threshold: u64, max: u64 },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::ZeroCapacity => write!(f, "capacity must be positive"),
            ConfigError::ZeroTickInterval => write!(f, "tick_interval_ms must be positive"),
            ConfigError::ZeroMaxMessageSize => write!(f, "max_message_size must be positive"),
            ConfigError::ZeroDuration => write!(f, "durations must be positive"),
            ConfigError::ZeroStreamCap => {
                write!(f, "max_concurrent_streams_per_peer must be positive")
            }
            ConfigError::ThresholdAboveMax { threshold, max } => write!(
                f,
                "push_threshold {threshold} exceeds max_message_size {max}"
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use rand::SeedableRng;

    #[test]
    fn empty_payload_has_fixed_digest() {
        // SHA-256 of the empty string.
        let expected = [
            0xe3, 0xb0, 0xc4, 0x42, 0x98, 0xfc, 0x1c, 0x14, 0x9a, 0xfb, 0xf4, 0xc8, 0x99, 0x6f,
            0xb9, 0x24, 0x27, 0xae, 0x41, 0xe4, 0x64, 0x9b, 0x93, 0x4c, 0xa4, 0x95, 0x99, 0x1b,
            0x78, 0x52, 0xb8, 0x55,
        ];
        assert_eq!(message_id(b""), MessageId::from_bytes(expected));
    }

    #[test]
    fn digest_is_deterministic() {
        assert_eq!(message_id(b"A"), message_id(b"A"));
        let m1 = Message::new(&b"A"[..]);
        let m2 = Message::new(&b"A"[..]);
        assert_eq!(m1.id(), m2.id());
    }

    #[test]
    fn random_payloads_have_distinct_ids() {
        use rand::RngCore;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let mut ids = std::collections::BTreeSet::new();
        for _ in 0..10_000 {
            let mut payload = alloc::vec![0u8; 24];
            rng.fill_bytes(&mut payload);
            ids.insert(message_id(&payload));
        }
        assert_eq!(ids.len(), 10_000);
    }

    #[test]
    fn payload_equality_iff_id_equality() {
        use rand::RngCore;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(9);
        let mut payloads: Vec<Vec<u8>> = Vec::new();
        for i in 0..64usize {
            let mut p = alloc::vec![0u8; 1 + (i % 17)];
            rng.fill_bytes(&mut p);
            payloads.push(p);
        }
        for a in &payloads {
            for b in &payloads {
                let same_payload = a == b;
                let same_id = message_id(a) == message_id(b);
                assert_eq!(same_payload, same_id);
            }
        }
    }

    #[test]
    fn bounded_constructor_rejects_oversize() {
        assert!(Message::bounded(&b"abcd"[..], 4).is_ok());
        let err = Message::bounded(&b"abcde"[..], 4).unwrap_err();
        assert_eq!(err, MessageError::TooLarge { size: 5, max: 4 });
    }

    #[test]
    fn config_validation_rejects_degenerate_values() {
        let mut cfg = EngineConfig::new(0, 1024);
        assert_eq!(cfg.validate(), Err(ConfigError::ZeroCapacity));
        cfg.capacity = 4;
        cfg.tick_interval_ms = 0;
        assert_eq!(cfg.validate(), Err(ConfigError::ZeroTickInterval));
        cfg.tick_interval_ms = 200;
        cfg.push_threshold = 2048;
        assert!(matches!(
            cfg.validate(),
            Err(ConfigError::ThresholdAboveMax { .. })
        ));
        cfg.push_threshold = 1024;
        assert_eq!(cfg.validate(), Ok(()));
    }

    #[test]
    fn default_bounds_follow_capacity_and_group_size() {
        let cfg = EngineConfig::new(8, 1 << 20);
        assert_eq!(cfg.unvalidated_bound(5), 32);
        assert_eq!(cfg.inbound_update_cap(), 32);
        let mut tight = cfg.clone();
        tight.unvalidated_bound_entries = Some(3);
        assert_eq!(tight.unvalidated_bound(5), 3);
    }
}
