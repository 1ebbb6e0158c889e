//! Classical-channel framing.
//!
//! ```text
//! | len: u32 BE | type: u8 | seq: u64 BE | payload: len bytes | tag: u64 BE |
//! ```
//!
//! The tag covers every byte before it.

use thiserror::Error;

pub const HEADER_LEN: usize = 4 + 1 + 8;
pub const TAG_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    SiftAnnounce = 1,
    DecoyReport = 2,
    VisibilityReport = 3,
    ParityRequest = 4,
    ParityResponse = 5,
    ShuffleSeed = 6,
    PaSeed = 7,
    KeyConfirm = 8,
    Abort = 9,
}

impl MessageType {
    pub const ALL: [MessageType; 9] = [
        MessageType::SiftAnnounce,
        MessageType::DecoyReport,
        MessageType::VisibilityReport,
        MessageType::ParityRequest,
        MessageType::ParityResponse,
        MessageType::ShuffleSeed,
        MessageType::PaSeed,
        MessageType::KeyConfirm,
        MessageType::Abort,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| *t as u8 == v)
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageType::SiftAnnounce => "SIFT_ANNOUNCE",
            MessageType::DecoyReport => "DECOY_REPORT",
            MessageType::VisibilityReport => "VISIBILITY_REPORT",
            MessageType::ParityRequest => "PARITY_REQUEST",
            MessageType::ParityResponse => "PARITY_RESPONSE",
            MessageType::ShuffleSeed => "SHUFFLE_SEED",
            MessageType::PaSeed => "PA_SEED",
            MessageType::KeyConfirm => "KEY_CONFIRM",
            MessageType::Abort => "ABORT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub kind: MessageType,
    pub seq: u64,
    pub payload: Vec<u8>,
    pub tag: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("truncated frame at byte {position}: need {needed} more bytes")]
    Truncated { position: usize, needed: usize },
    #[error("unknown message type {value} at byte {position}")]
    UnknownType { position: usize, value: u8 },
    #[error("payload of {len} bytes exceeds the frame limit")]
    Oversize { len: usize },
    #[error("{extra} trailing bytes after frame at byte {position}")]
    Trailing { position: usize, extra: usize },
    #[error("authentication tag mismatch at byte {position}")]
    TagMismatch { position: usize },
    #[error("malformed {kind} payload at byte {position}")]
    Payload { kind: &'static str, position: usize },
}

impl Message {
    pub fn new(kind: MessageType, seq: u64, payload: Vec<u8>) -> Self {
        Self {
            kind,
            seq,
            payload,
            tag: 0,
        }
    }

    /// The authenticated bytes: header and payload.
    pub fn signed_bytes(&self) -> Result<Vec<u8>, FrameError> {
        let len = u32::try_from(self.payload.len()).map_err(|_| FrameError::Oversize {
            len: self.payload.len(),
        })?;
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len() + TAG_LEN);
        out.extend_from_slice(&len.to_be_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len() + TAG_LEN
    }
}

pub fn encode_message(msg: &Message) -> Result<Vec<u8>, FrameError> {
    let mut out = msg.signed_bytes()?;
    out.extend_from_slice(&msg.tag.to_be_bytes());
    Ok(out)
}

/// Reads one frame from the front of `bytes`; returns it and its length.
pub fn read_frame(bytes: &[u8]) -> Result<(Message, usize), FrameError> {
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Truncated {
            position: bytes.len(),
            needed: HEADER_LEN - bytes.len(),
        });
    }
    let len = u32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let kind = MessageType::from_u8(bytes[4]).ok_or(FrameError::UnknownType {
        position: 4,
        value: bytes[4],
    })?;
    let seq = u64::from_be_bytes(bytes[5..13].try_into().expect("8 bytes"));
    let total = HEADER_LEN + len + TAG_LEN;
    if bytes.len() < total {
        return Err(FrameError::Truncated {
            position: bytes.len(),
            needed: total - bytes.len(),
        });
    }
    let payload = bytes[HEADER_LEN..HEADER_LEN + len].to_vec();
    let tag = u64::from_be_bytes(bytes[total - TAG_LEN..total].try_into().expect("8 bytes"));
    Ok((
        Message {
            kind,
            seq,
            payload,
            tag,
        },
        total,
    ))
}

/// Decodes exactly one frame.
pub fn decode_message(bytes: &[u8]) -> Result<Message, FrameError> {
    let (msg, used) = read_frame(bytes)?;
    if used != bytes.len() {
        return Err(FrameError::Trailing {
            position: used,
            extra: bytes.len() - used,
        });
    }
    Ok(msg)
}

/// Splits a concatenation of frames, as written to a transcript file.
pub fn split_frames(mut bytes: &[u8]) -> Result<Vec<Message>, FrameError> {
    let mut out = Vec::new();
    let mut offset = 0;
    while !bytes.is_empty() {
        let (msg, used) = read_frame(bytes).map_err(|e| shift(e, offset))?;
        out.push(msg);
        bytes = &bytes[used..];
        offset += used;
    }
    Ok(out)
}

fn shift(e: FrameError, offset: usize) -> FrameError {
    match e {
        FrameError::Truncated { position, needed } => FrameError::Truncated {
            position: position + offset,
            needed,
        },
        FrameError::UnknownType { position, value } => FrameError::UnknownType {
            position: position + offset,
            value,
        },
        other => other,
    }
}

/// Little-endian payload builder.
#[derive(Debug, Default)]
pub struct PayloadWriter {
    buf: Vec<u8>,
}

impl PayloadWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(mut self, v: u8) -> Self {
        self.buf.push(v);
        self
    }

    pub fn u16(mut self, v: u16) -> Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u32(mut self, v: u32) -> Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(mut self, v: u64) -> Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(self, v: f64) -> Self {
        self.u64(v.to_bits())
    }

    /// Length-prefixed bytes.
    pub fn bytes(mut self, v: &[u8]) -> Self {
        self = self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct PayloadReader<'a> {
    kind: &'static str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    pub fn new(kind: MessageType, buf: &'a [u8]) -> Self {
        Self {
            kind: kind.name(),
            buf,
            pos: 0,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FrameError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(FrameError::Payload {
                kind: self.kind,
                position: HEADER_LEN + self.pos,
            }),
        }
    }

    pub fn u8(&mut self) -> Result<u8, FrameError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, FrameError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    pub fn u32(&mut self) -> Result<u32, FrameError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn u64(&mut self) -> Result<u64, FrameError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn f64(&mut self) -> Result<f64, FrameError> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], FrameError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    /// Fails unless the whole payload was consumed.
    pub fn end(self) -> Result<(), FrameError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(FrameError::Payload {
                kind: self.kind,
                position: HEADER_LEN + self.pos,
            })
        }
    }
}
