//! The authenticated classical channel and transcript replay.

use crate::distillation::{wc_tag, wc_verify, AuthKeyPool, TAG_BITS};

use super::keystore::KeyStore;
use super::wire::{
    encode_message, read_frame, split_frames, FrameError, Message, MessageType, TAG_LEN,
};
use super::SessionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Alice,
    Bob,
}

/// Called with the frame index and the encoded frame before delivery.
pub type Tamper = Box<dyn FnMut(usize, &mut Vec<u8>)>;

pub(crate) struct Wire {
    pub transcript: Vec<u8>,
    pub frames: usize,
    tamper: Option<Tamper>,
    // next sequence number, per direction: [alice->bob, bob->alice]
    next_send: [u64; 2],
    next_recv: [u64; 2],
}

impl Wire {
    pub fn new(tamper: Option<Tamper>) -> Self {
        Self {
            transcript: Vec::new(),
            frames: 0,
            tamper,
            next_send: [0; 2],
            next_recv: [0; 2],
        }
    }

    /// Tags and sends one message, then decodes and verifies it on the
    /// receiving side. Returns the message as the receiver accepted it.
    pub fn transfer(
        &mut self,
        from: Side,
        sender: &mut KeyStore,
        receiver: &mut KeyStore,
        kind: MessageType,
        payload: Vec<u8>,
    ) -> Result<Message, SessionError> {
        let dir = from as usize;
        let mut msg = Message::new(kind, self.next_send[dir], payload);
        self.next_send[dir] += 1;
        let signed = msg.signed_bytes()?;
        msg.tag = wc_tag(&mut sender.auth, &signed, TAG_BITS)?;
        let mut frame = encode_message(&msg)?;
        let index = self.frames;
        if let Some(t) = self.tamper.as_mut() {
            t(index, &mut frame);
        }
        self.transcript.extend_from_slice(&frame);
        self.frames += 1;

        let (received, used) = read_frame(&frame)?;
        if used != frame.len() {
            return Err(FrameError::Trailing {
                position: used,
                extra: frame.len() - used,
            }
            .into());
        }
        let signed = &frame[..used - TAG_LEN];
        if !wc_verify(&mut receiver.auth, signed, received.tag, TAG_BITS)? {
            return Err(SessionError::AuthFailure {
                frame: index,
                kind: received.kind.name(),
            });
        }
        if received.seq != self.next_recv[dir] {
            return Err(SessionError::Sequence {
                expected: self.next_recv[dir],
                got: received.seq,
            });
        }
        self.next_recv[dir] += 1;
        if received.kind != kind {
            if received.kind == MessageType::Abort {
                return Err(SessionError::PeerAbort(
                    String::from_utf8_lossy(&received.payload).into(),
                ));
            }
            return Err(SessionError::UnexpectedMessage {
                expected: kind.name(),
                got: received.kind.name(),
            });
        }
        Ok(received)
    }
}

/// Re-verifies every frame of a transcript against the authentication key
/// stream that was in use (bootstrap followed by every top-up). Returns the
/// number of frames verified.
pub fn replay_transcript(transcript: &[u8], auth_key: &AuthKeyPool) -> Result<usize, SessionError> {
    let frames = split_frames(transcript)?;
    let mut pool = AuthKeyPool::new(auth_key.bits().clone());
    for (i, msg) in frames.iter().enumerate() {
        // each endpoint spends one tag's worth of its own copy per frame
        let signed = msg.signed_bytes()?;
        if !wc_verify(&mut pool, &signed, msg.tag, TAG_BITS)? {
            return Err(SessionError::AuthFailure {
                frame: i,
                kind: msg.kind.name(),
            });
        }
    }
    Ok(frames.len())
}
