//! Length-prefixed frame encoding for the engine's reliable channels.
//!
//! Every frame is `len: u32 LE` (count of bytes after the prefix) followed by
//! a one-byte kind tag and the kind's fields, all little-endian:
//!
//! ```text
//! 1 update/full    slot:u32  version:u64  id:[u8;32]  plen:u32  payload
//! 2 update/advert  slot:u32  version:u64  id:[u8;32]  size:u64
//! 3 pull request   id:[u8;32]
//! 4 pull response  id:[u8;32]  plen:u32  payload
//! 5 pull refusal   id:[u8;32]
//! ```
//!
//! The sender identity is not encoded: channels are authenticated, so the
//! transport hands the true source to the receiver. Decoding does not verify
//! that a carried id matches its payload digest — that check belongs to the
//! receive engine, which counts mismatches as protocol violations.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use crate::types::{Advert, Message, MessageId, SlotContent, SlotIndex, Version};

const KIND_UPDATE_FULL: u8 = 1;
const KIND_UPDATE_ADVERT: u8 = 2;
const KIND_PULL_REQUEST: u8 = 3;
const KIND_PULL_RESPONSE: u8 = 4;
const KIND_PULL_REFUSAL: u8 = 5;

const LEN_PREFIX: u64 = 4;
const ID_LEN: u64 = 32;

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Frame {
    /// Versioned slot announcement, carrying the payload or just the advert.
    Update {
        slot: SlotIndex,
        version: Version,
        content: SlotContent,
    },
    /// Request for the payload of an advertised message.
    PullRequest { id: MessageId },
    /// Response to a pull: `None` payload means the serving side no longer
    /// holds the message (a legal race with abort, not a fault).
    PullResponse {
        id: MessageId,
        payload: Option<Arc<[u8]>>,
    },
}

impl Frame {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Frame::Update { content, .. } if content.is_full() => "update_full",
            Frame::Update { .. } => "update_advert",
            Frame::PullRequest { .. } => "pull_request",
            Frame::PullResponse { payload: Some(_), .. } => "pull_response",
            Frame::PullResponse { payload: None, .. } => "pull_refusal",
        }
    }

    /// Raw payload bytes carried inside the frame, if any.
    pub fn payload_len(&self) -> u64 {
        match self {
            Frame::Update {
                content: SlotContent::Full(m),
                ..
            } => m.size(),
            Frame::PullResponse {
                payload: Some(p), ..
            } => p.len() as u64,
            _ => 0,
        }
    }

    /// Exact size of `encode`'s output, including the length prefix.
    pub fn encoded_len(&self) -> u64 {
        LEN_PREFIX
            + 1
            + match self {
                Frame::Update { content, .. } => {
                    4 + 8
                        + ID_LEN
                        + match content {
                            SlotContent::Full(m) => 4 + m.size(),
                            SlotContent::Advert(_) => 8,
                        }
                }
                Frame::PullRequest { .. } => ID_LEN,
                Frame::PullResponse { payload, .. } => {
                    ID_LEN
                        + match payload {
                            Some(p) => 4 + p.len() as u64,
                            None => 0,
                        }
                }
            }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len() as usize);
        out.extend_from_slice(&[0; 4]); // length back-patched below
        match self {
            Frame::Update {
                slot,
                version,
                content,
            } => {
                match content {
                    SlotContent::Full(m) => {
                        out.push(KIND_UPDATE_FULL);
                        out.extend_from_slice(&slot.get().to_le_bytes());
                        out.extend_from_slice(&version.0.to_le_bytes());
                        out.extend_from_slice(m.id().as_bytes());
                        out.extend_from_slice(&(m.payload().len() as u32).to_le_bytes());
                        out.extend_from_slice(m.payload());
                    }
                    SlotContent::Advert(a) => {
                        out.push(KIND_UPDATE_ADVERT);
                        out.extend_from_slice(&slot.get().to_le_bytes());
                        out.extend_from_slice(&version.0.to_le_bytes());
                        out.extend_from_slice(a.id.as_bytes());
                        out.extend_from_slice(&a.size.to_le_bytes());
                    }
                }
            }
            Frame::PullRequest { id } => {
                out.push(KIND_PULL_REQUEST);
                out.extend_from_slice(id.as_bytes());
            }
            Frame::PullResponse { id, payload } => match payload {
                Some(p) => {
                    out.push(KIND_PULL_RESPONSE);
                    out.extend_from_slice(id.as_bytes());
                    out.extend_from_slice(&(p.len() as u32).to_le_bytes());
                    out.extend_from_slice(p);
                }
                None => {
                    out.push(KIND_PULL_REFUSAL);
                    out.extend_from_slice(id.as_bytes());
                }
            },
        }
        let body_len = (out.len() - 4) as u32;
        out[..4].copy_from_slice(&body_len.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Frame, WireError> {
        let mut r = Reader::new(bytes);
        let body_len = r.u32()? as usize;
        if r.remaining() != body_len {
            return Err(WireError::LengthMismatch {
                declared: body_len as u64,
                actual: r.remaining() as u64,
            });
        }
        let kind = r.u8()?;
        let frame = match kind {
            KIND_UPDATE_FULL => {
                let slot = r.slot()?;
                let version = Version(r.u64()?);
                let id = r.id()?;
                let payload = r.payload()?;
                Frame::Update {
                    slot,
                    version,
                    content: SlotContent::Full(Message::from_parts(id, payload)),
                }
            }
            KIND_UPDATE_ADVERT => {
                let slot = r.slot()?;
                let version = Version(r.u64()?);
                let id = r.id()?;
                let size = r.u64()?;
                Frame::Update {
                    slot,
                    version,
                    content: SlotContent::Advert(Advert { id, size }),
                }
            }
            KIND_PULL_REQUEST => Frame::PullRequest { id: r.id()? },
            KIND_PULL_RESPONSE => {
                let id = r.id()?;
                let payload = r.payload()?;
                Frame::PullResponse {
                    id,
                    payload: Some(payload),
                }
            }
            KIND_PULL_REFUSAL => Frame::PullResponse {
                id: r.id()?,
                payload: None,
            },
            other => return Err(WireError::UnknownKind(other)),
        };
        if r.remaining() != 0 {
            return Err(WireError::TrailingBytes(r.remaining() as u64));
        }
        Ok(frame)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum WireError {
    Truncated,
    LengthMismatch { declared: u64, actual: u64 },
    UnknownKind(u8),
    ZeroSlot,
    TrailingBytes(u64),
}

impl fmt::Display for WireError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WireError::Truncated => write!(f, "frame truncated"),
            WireError::LengthMismatch { declared, actual } => {
                write!(f, "length prefix {declared} but {actual} bytes follow")
            }
            WireError::UnknownKind(k) => write!(f, "unknown frame kind {k}"),
            WireError::ZeroSlot => write!(f, "slot index 0 is not encodable"),
            WireError::TrailingBytes(n) => write!(f, "{n} trailing bytes after frame"),
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes }
    }

    fn remaining(&self) -> usize {
        self.bytes.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.bytes.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        let b = self.take(8)?;
        let mut raw = [0u8; 8];
        raw.copy_from_slice(b);
        Ok(u64::from_le_bytes(raw))
    }

    fn slot(&mut self) -> Result<SlotIndex, WireError> {
        SlotIndex::new(self.u32()?).ok_or(WireError::ZeroSlot)
    }

    fn id(&mut self) -> Result<MessageId, WireError> {
        let b = self.take(32)?;
        let mut raw = [0u8; 32];
        raw.copy_from_slice(b);
        Ok(MessageId::from_bytes(raw))
    }

    fn payload(&mut self) -> Result<Arc<[u8]>, WireError> {
        let len = self.u32()? as usize;
        Ok(Arc::from(self.take(len)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::message_id;
    use proptest::prelude::*;

    fn arb_frame() -> impl Strategy<Value = Frame> {
        let msg = proptest::collection::vec(any::<u8>(), 0..64).prop_map(Message::new);
        let id = proptest::array::uniform32(any::<u8>()).prop_map(MessageId::from_bytes);
        let slot = (1u32..10_000).prop_map(|k| SlotIndex::new(k).unwrap());
        let version = any::<u64>().prop_map(Version);
        prop_oneof![
            (slot.clone(), version.clone(), msg.clone()).prop_map(|(slot, version, m)| {
                Frame::Update {
                    slot,
                    version,
                    content: SlotContent::Full(m),
                }
            }),
            (slot, version, id.clone(), any::<u64>()).prop_map(|(slot, version, id, size)| {
                Frame::Update {
                    slot,
                    version,
                    content: SlotContent::Advert(Advert { id, size }),
                }
            }),
            id.clone().prop_map(|id| Frame::PullRequest { id }),
            (id.clone(), proptest::collection::vec(any::<u8>(), 0..64)).prop_map(|(id, p)| {
                Frame::PullResponse {
                    id,
                    payload: Some(Arc::from(p.as_slice())),
                }
            }),
            id.prop_map(|id| Frame::PullResponse { id, payload: None }),
        ]
    }

    proptest! {
        #[test]
        fn round_trip_and_length(frame in arb_frame()) {
            let bytes = frame.encode();
            prop_assert_eq!(bytes.len() as u64, frame.encoded_len());
            let back = Frame::decode(&bytes).unwrap();
            prop_assert_eq!(back, frame);
        }
    }

    #[test]
    fn truncated_and_garbage_inputs_error() {
        let frame = Frame::PullRequest {
            id: message_id(b"x"),
        };
        let bytes = frame.encode();
        assert!(Frame::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(Frame::decode(&[]).is_err());
        let mut wrong_kind = bytes.clone();
        wrong_kind[4] = 99;
        assert!(matches!(
            Frame::decode(&wrong_kind),
            Err(WireError::UnknownKind(99))
        ));
    }
}
