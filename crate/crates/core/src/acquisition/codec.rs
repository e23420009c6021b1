//! Framing: `NIRT` magic, version, message type, little-endian payload
//! length, payload, little-endian CRC-32 of the payload.

use serde::{Deserialize, Serialize};

use crate::io::{encode_counts, frame_from_parts, frame_sidecar, Sidecar};
use crate::radiometry::RawFrame;

pub const MAGIC: [u8; 4] = *b"NIRT";
pub const PROTOCOL_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
pub const TRAILER_LEN: usize = 4;
/// Larger declared payloads are treated as corruption.
pub const MAX_PAYLOAD: usize = 16 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MessageType {
    Frame,
    SequenceStart,
    SequenceEnd,
    Error,
}

impl MessageType {
    pub fn code(self) -> u8 {
        match self {
            MessageType::Frame => 0x01,
            MessageType::SequenceStart => 0x02,
            MessageType::SequenceEnd => 0x03,
            MessageType::Error => 0x7F,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0x01 => Some(MessageType::Frame),
            0x02 => Some(MessageType::SequenceStart),
            0x03 => Some(MessageType::SequenceEnd),
            0x7F => Some(MessageType::Error),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WireMessage {
    pub kind: MessageType,
    pub payload: Vec<u8>,
}

pub fn encode(msg: &WireMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + msg.payload.len() + TRAILER_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(PROTOCOL_VERSION);
    out.push(msg.kind.code());
    out.extend_from_slice(&(msg.payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&msg.payload);
    out.extend_from_slice(&crc32fast::hash(&msg.payload).to_le_bytes());
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DropReason {
    ChecksumMismatch { kind: u8, expected: u32, actual: u32 },
    UnsupportedVersion(u8),
    UnknownType(u8),
    OversizedPayload(u32),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DecodeEvent {
    Message(WireMessage),
    Dropped(DropReason),
}

/// Incremental decoder; bytes may arrive in chunks of any size.
#[derive(Debug, Default)]
pub struct StreamDecoder {
    buf: Vec<u8>,
    skipped: usize,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Bytes discarded while searching for a magic sequence.
    pub fn skipped_bytes(&self) -> usize {
        self.skipped
    }

    /// Bytes held back waiting for the rest of a message.
    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    pub fn push(&mut self, bytes: &[u8]) -> Vec<DecodeEvent> {
        self.buf.extend_from_slice(bytes);
        let mut events = Vec::new();
        let mut pos = 0;
        loop {
            match find_magic(&self.buf[pos..]) {
                Some(off) => {
                    self.skipped += off;
                    pos += off;
                }
                None => {
                    // keep a tail that may be the start of a magic
                    let keep = partial_magic_suffix(&self.buf[pos..]);
                    let drop = self.buf.len() - pos - keep;
                    self.skipped += drop;
                    pos += drop;
                    break;
                }
            }
            let rest = &self.buf[pos..];
            if rest.len() < HEADER_LEN {
                break;
            }
            let (version, code) = (rest[4], rest[5]);
            let len = u32::from_le_bytes([rest[6], rest[7], rest[8], rest[9]]);
            let reason = if version != PROTOCOL_VERSION {
                Some(DropReason::UnsupportedVersion(version))
            } else if MessageType::from_code(code).is_none() {
                Some(DropReason::UnknownType(code))
            } else if len as usize > MAX_PAYLOAD {
                Some(DropReason::OversizedPayload(len))
            } else {
                None
            };
            if let Some(reason) = reason {
                events.push(DecodeEvent::Dropped(reason));
                pos += 1;
                continue;
            }
            let total = HEADER_LEN + len as usize + TRAILER_LEN;
            if rest.len() < total {
                break;
            }
            let payload = &rest[HEADER_LEN..HEADER_LEN + len as usize];
            let t = &rest[HEADER_LEN + len as usize..total];
            let expected = u32::from_le_bytes([t[0], t[1], t[2], t[3]]);
            let actual = crc32fast::hash(payload);
            if expected == actual {
                events.push(DecodeEvent::Message(WireMessage {
                    kind: MessageType::from_code(code).expect("checked above"),
                    payload: payload.to_vec(),
                }));
            } else {
                events.push(DecodeEvent::Dropped(DropReason::ChecksumMismatch {
                    kind: code,
                    expected,
                    actual,
                }));
            }
            // the header was sound, so its length is trusted to skip the body
            pos += total;
        }
        self.buf.drain(..pos);
        events
    }
}

fn find_magic(buf: &[u8]) -> Option<usize> {
    buf.windows(MAGIC.len()).position(|w| w == MAGIC)
}

fn partial_magic_suffix(buf: &[u8]) -> usize {
    (1..MAGIC.len())
        .rev()
        .find(|&k| buf.len() >= k && buf[buf.len() - k..] == MAGIC[..k])
        .unwrap_or(0)
}

/// Single-pass decode of a complete byte stream.
pub fn decode_stream(bytes: &[u8]) -> Vec<DecodeEvent> {
    StreamDecoder::new().push(bytes)
}

/// Payload of a frame message: `u32` sidecar length, sidecar JSON, counts.
pub fn frame_payload(frame: &RawFrame) -> Vec<u8> {
    let sidecar = serde_json::to_vec(&frame_sidecar(frame)).expect("sidecar serialises");
    let mut out = Vec::with_capacity(4 + sidecar.len() + 2 * frame.counts.len());
    out.extend_from_slice(&(sidecar.len() as u32).to_le_bytes());
    out.extend_from_slice(&sidecar);
    out.extend_from_slice(&encode_counts(&frame.counts));
    out
}

pub fn parse_frame_payload(payload: &[u8]) -> Result<RawFrame, String> {
    if payload.len() < 4 {
        return Err("frame payload shorter than its length prefix".into());
    }
    let n = u32::from_le_bytes([payload[0], payload[1], payload[2], payload[3]]) as usize;
    let body = &payload[4..];
    if body.len() < n {
        return Err("sidecar length exceeds payload".into());
    }
    let sidecar: Sidecar = serde_json::from_slice(&body[..n]).map_err(|e| e.to_string())?;
    frame_from_parts(&sidecar, &body[n..])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceStart {
    pub sequence_id: String,
    pub expected_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceEnd {
    pub sequence_id: String,
    pub frames_sent: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub frames_sent: usize,
}

pub fn json_message<T: Serialize>(kind: MessageType, body: &T) -> WireMessage {
    WireMessage {
        kind,
        payload: serde_json::to_vec(body).expect("serialisable body"),
    }
}
