//! Adversarial peers for security scenarios. These bypass the engine
//! entirely and speak raw frames, which is exactly what a malicious group
//! member can do.

use alloc::vec::Vec;

use rand::RngCore;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::sim::{derive_rng, Ctx, SimNode, TimerKind};
use crate::types::{Advert, Message, MessageId, PeerId, SimTime, SlotContent, SlotIndex, Version};
use crate::wire::Frame;

const STEP_MS: SimTime = 100;

/// How a flooder picks slot indices.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloodSlotMode {
    /// Protocol-legal flooding: cycle within `[1, capacity]` under
    /// ever-increasing versions, churning the victim's entries in place.
    #[default]
    Cycle,
    /// Protocol-violating flooding: a fresh out-of-range slot per update, so
    /// a receiver without bounds grows an entry per update.
    Grow,
}

/// Floods victims with fabricated adverts at a fixed rate.
pub struct FlooderNode {
    me: PeerId,
    victims: Vec<PeerId>,
    updates_per_sec: u32,
    slot_mode: FloodSlotMode,
    advert_size: u64,
    capacity: u32,
    rng: ChaCha12Rng,
    version: u64,
    cursor: u64,
    emitted_rounds: u64,
}

impl FlooderNode {
    pub fn new(
        me: PeerId,
        victims: Vec<PeerId>,
        updates_per_sec: u32,
        slot_mode: FloodSlotMode,
        advert_size: u64,
        capacity: u32,
        seed: u64,
    ) -> FlooderNode {
        FlooderNode {
            me,
            victims,
            updates_per_sec,
            slot_mode,
            advert_size,
            capacity,
            rng: derive_rng(seed, 0x666c6f6f64, me.0 as u64),
            version: 0,
            cursor: 0,
            emitted_rounds: 0,
        }
    }

    fn fabricate_id(&mut self) -> MessageId {
        let mut raw = [0u8; 32];
        self.rng.fill_bytes(&mut raw);
        MessageId::from_bytes(raw)
    }

    /// One round: one fabricated update, sent to every victim.
    fn emit_round(&mut self, ctx: &mut Ctx<'_>) {
        let id = self.fabricate_id();
        let slot = match self.slot_mode {
            FloodSlotMode::Cycle => 1 + (self.cursor % self.capacity as u64) as u32,
            FloodSlotMode::Grow => self.capacity + 1 + self.cursor as u32,
        };
        self.cursor += 1;
        self.version += 1;
        let update = Frame::Update {
            slot: SlotIndex::new(slot).expect("slot >= 1"),
            version: Version(self.version),
            content: SlotContent::Advert(Advert {
                id,
                size: self.advert_size,
            }),
        };
        for victim in self.victims.clone() {
            let _ = ctx.send_frame(victim, update.clone(), None);
        }
    }
}

impl SimNode for FlooderNode {
    fn on_start(&mut self, ctx: &mut Ctx<'_>) {
        ctx.timer_in(STEP_MS, TimerKind::AdversaryStep);
    }

    fn on_frame(&mut self, _ctx: &mut Ctx<'_>, _src: PeerId, _frame: Frame) {
        // Ignores everything, including pull requests for its fabrications.
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_>, kind: TimerKind) {
        if matches!(kind, TimerKind::AdversaryStep) {
            let target = ctx.now() * self.updates_per_sec as u64 / 1000;
            while self.emitted_rounds < target {
                self.emit_round(ctx);
                self.emitted_rounds += 1;
            }
            ctx.timer_in(STEP_MS, TimerKind::AdversaryStep);
        }
    }

    fn on_restart(&mut self, ctx: &mut Ctx<'_>) {
        ctx.timer_in(STEP_MS, TimerKind::AdversaryStep);
    }
}

/// Re-advertises every message it hears about and never serves a pull:
/// the shape of an attacker that tries to stall downloads by winning the
/// first-advertiser spot.
pub struct SilentAdvertiserNode {
    me: PeerId,
    n: u32,
    capacity: u32,
    version: u64,
    cursor: u64,
}

impl SilentAdvertiserNode {
    pub fn new(me: PeerId, n: u32, capacity: u32) -> SilentAdvertiserNode {
        SilentAdvertiserNode {
            me,
            n,
            capacity,
            version: 0,
            cursor: 0,
        }
    }
}

impl SimNode for SilentAdvertiserNode {
    fn on_start(&mut self, _ctx: &mut Ctx<'_>) {}

    fn on_frame(&mut self, ctx: &mut Ctx<'_>, src: PeerId, frame: Frame) {
        let Frame::Update { content, .. } = frame else {
            return; // pull requests go unanswered
        };
        let advert = Advert {
            id: content.id(),
            size: content.size(),
        };
        let slot = 1 + (self.cursor % self.capacity as u64) as u32;
        self.cursor += 1;
        self.version += 1;
        let echo = Frame::Update {
            slot: SlotIndex::new(slot).expect("slot >= 1"),
            version: Version(self.version),
            content: SlotContent::Advert(advert),
        };
        for peer in (0..self.n).map(PeerId) {
            if peer != self.me && peer != src {
                let _ = ctx.send_frame(peer, echo.clone(), None);
            }
        }
    }

    fn on_timer(&mut self, _ctx: &mut Ctx<'_>, _kind: TimerKind) {}
}

/// Sends a different payload to every receiver under the same slot and
/// version. Content addressing makes the copies distinct messages, so no two
/// honest receivers can end up holding different payloads under one id.
pub struct EquivocatorNode {
    me: PeerId,
    n: u32,
    capacity: u32,
    message_size: u64,
    rate_per_sec: u32,
    rng: ChaCha12Rng,
    version: u64,
    cursor: u64,
    emitted_rounds: u64,
}

impl EquivocatorNode {
    pub fn new(
        me: PeerId,
        n: u32,
        capacity: u32,
        message_size: u64,
        rate_per_sec: u32,
        seed: u64,
    ) -> EquivocatorNode {
        EquivocatorNode {
            me,
            n,
            capacity,
            message_size,
            rate_per_sec,
            rng: derive_rng(seed, 0x65717569, me.0 as u64),
            version: 0,
            cursor: 0,
            emitted_rounds: 0,
        }
    }

    fn emit_round(&mut self, ctx: &mut Ctx<'_>) {
        let slot = SlotIndex::new(1 + (self.cursor % self.capacity as u64) as u32).unwrap();
        self.cursor += 1;
        self.version += 1;
        for peer in (0..self.n).map(PeerId) {
            if peer == self.me {
                continue;
            }
            let mut payload = alloc::vec![0u8; self.message_size as usize];
            self.rng.fill_bytes(&mut payload);
            let frame = Frame::Update {
                slot,
                version: Version(self.version),
                content: SlotContent::Full(Message::new(payload)),
            };
            let _ = ctx.send_frame(peer, frame, None);
        }
    }
}

impl SimNode for EquivocatorNode {
    fn on_start(&mut self, ctx: &mut Ctx<'_>) {
        ctx.timer_in(STEP_MS, TimerKind::AdversaryStep);
    }

    fn on_frame(&mut self, _ctx: &mut Ctx<'_>, _src: PeerId, _frame: Frame) {}

    fn on_timer(&mut self, ctx: &mut Ctx<'_>, kind: TimerKind) {
        if matches!(kind, TimerKind::AdversaryStep) {
            let target = ctx.now() * self.rate_per_sec as u64 / 1000;
            while self.emitted_rounds < target {
                self.emit_round(ctx);
                self.emitted_rounds += 1;
            }
            ctx.timer_in(STEP_MS, TimerKind::AdversaryStep);
        }
    }

    fn on_restart(&mut self, ctx: &mut Ctx<'_>) {
        ctx.timer_in(STEP_MS, TimerKind::AdversaryStep);
    }
}
