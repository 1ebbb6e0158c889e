//! Alice's transmitted sequence.
//!
//! A frame is defined lazily: slot `i` reads words `2i` and `2i + 1` of a
//! ChaCha20 stream keyed by the frame key. The first word decides decoy vs
//! data (`word < floor(f * 2^64)`), the low bit of the second is the data bit.
//! This keeps a 10^11-slot frame at constant memory.

use crate::randomness::{bernoulli_threshold, BitSource, KeyStream, Seed};

use super::ProtocolError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Data(bool),
    Decoy,
}

impl SlotKind {
    /// Which halves carry light: Data(0) = (full, empty), Data(1) = (empty,
    /// full), Decoy = (full, full).
    pub fn pulses(self) -> [bool; 2] {
        match self {
            SlotKind::Data(false) => [true, false],
            SlotKind::Data(true) => [false, true],
            SlotKind::Decoy => [true, true],
        }
    }

    pub fn is_decoy(self) -> bool {
        matches!(self, SlotKind::Decoy)
    }
}

#[derive(Debug, Clone)]
pub struct FrameSchedule {
    key: Seed,
    n_slots: u64,
    decoy_fraction: f64,
    decoy_threshold: u128,
}

/// Draws a 256-bit frame key from `source` and fixes the slot count.
pub fn generate_frame(
    source: &mut BitSource,
    n_slots: u64,
    decoy_fraction: f64,
) -> Result<FrameSchedule, ProtocolError> {
    if n_slots == 0 {
        return Err(ProtocolError::EmptyFrame);
    }
    let decoy_threshold = bernoulli_threshold(decoy_fraction)?;
    let key_bits = source.next_bits(256);
    let mut key = [0u8; 32];
    key.copy_from_slice(&key_bits.to_bytes());
    Ok(FrameSchedule {
        key: Seed(key),
        n_slots,
        decoy_fraction,
        decoy_threshold,
    })
}

impl FrameSchedule {
    pub fn n_slots(&self) -> u64 {
        self.n_slots
    }

    pub fn n_pulses(&self) -> u64 {
        2 * self.n_slots
    }

    pub fn decoy_fraction(&self) -> f64 {
        self.decoy_fraction
    }

    /// A reader with its own stream cursor, for repeated lookups.
    pub fn reader(&self) -> FrameReader<'_> {
        FrameReader {
            frame: self,
            stream: KeyStream::new(self.key),
        }
    }

    pub fn kind(&self, slot: u64) -> SlotKind {
        self.reader().kind(slot)
    }

    pub fn kinds(&self) -> impl Iterator<Item = SlotKind> + '_ {
        let mut reader = self.reader();
        (0..self.n_slots).map(move |i| reader.kind(i))
    }

    /// Per-pulse intensity pattern (`true` = mean photon number mu), length
    /// `2 * n_slots`. Only sensible for small frames.
    pub fn pulse_pattern(&self) -> Vec<bool> {
        self.kinds().flat_map(SlotKind::pulses).collect()
    }
}

pub struct FrameReader<'a> {
    frame: &'a FrameSchedule,
    stream: KeyStream,
}

impl FrameReader<'_> {
    pub fn kind(&mut self, slot: u64) -> SlotKind {
        assert!(slot < self.frame.n_slots, "slot {slot} outside frame");
        let decoy_word = self.stream.word(2 * slot);
        let bit_word = self.stream.word(2 * slot + 1);
        if (decoy_word as u128) < self.frame.decoy_threshold {
            SlotKind::Decoy
        } else {
            SlotKind::Data(bit_word & 1 == 1)
        }
    }

    /// Whether pulse `index` (two per slot) is non-empty.
    pub fn pulse(&mut self, index: u64) -> bool {
        self.kind(index / 2).pulses()[(index % 2) as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_decoys() {
        let mut src = BitSource::from_u64(1);
        let f = generate_frame(&mut src, 1000, 0.0).unwrap();
        assert!(f.kinds().all(|k| !k.is_decoy()));
    }

    #[test]
    fn all_decoys() {
        let mut src = BitSource::from_u64(1);
        let f = generate_frame(&mut src, 1000, 1.0).unwrap();
        assert!(f.kinds().all(SlotKind::is_decoy));
        assert!(f.pulse_pattern().iter().all(|&p| p));
    }

    #[test]
    fn decoy_count_binomial() {
        let mut src = BitSource::from_u64(2);
        let f = generate_frame(&mut src, 100_000, 0.1).unwrap();
        let decoys = f.kinds().filter(|k| k.is_decoy()).count();
        assert!((9_400..=10_600).contains(&decoys), "{decoys}");
        let ones = f.kinds().filter(|k| *k == SlotKind::Data(true)).count();
        let data = 100_000 - decoys;
        let sd = (data as f64 * 0.25).sqrt();
        assert!((ones as f64 - data as f64 / 2.0).abs() < 4.0 * sd);
    }

    #[test]
    fn encoding_positions() {
        assert_eq!(SlotKind::Data(false).pulses(), [true, false]);
        assert_eq!(SlotKind::Data(true).pulses(), [false, true]);
        assert_eq!(SlotKind::Decoy.pulses(), [true, true]);
    }

    #[test]
    fn pattern_length_and_random_access() {
        let mut src = BitSource::from_u64(3);
        let f = generate_frame(&mut src, 500, 0.2).unwrap();
        let pattern = f.pulse_pattern();
        assert_eq!(pattern.len(), 1000);
        let mut r = f.reader();
        for k in [999u64, 0, 500, 3, 998, 1] {
            assert_eq!(r.pulse(k), pattern[k as usize]);
        }
    }

    #[test]
    fn deterministic_given_source_state() {
        let a = generate_frame(&mut BitSource::from_u64(4), 300, 0.3).unwrap();
        let b = generate_frame(&mut BitSource::from_u64(4), 300, 0.3).unwrap();
        assert!(a.kinds().eq(b.kinds()));
        assert!(matches!(
            generate_frame(&mut BitSource::from_u64(4), 0, 0.3),
            Err(ProtocolError::EmptyFrame)
        ));
    }
}
