//! Seed-deterministic random bit supply.
//!
//! A [`BitSource`] reads a ChaCha20 keystream at a bit-granular cursor. The
//! stream is counter based, so any word can be fetched in O(1) and a labelled
//! child source is a pure function of the parent seed and the label.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bits::BitString;

#[derive(Debug, Error, PartialEq)]
pub enum RandomnessError {
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("fork label must be non-empty")]
    EmptyLabel,
    #[error("seed must be 64 hex characters: {0}")]
    BadSeed(String),
}

/// A 256-bit seed.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Seed(pub [u8; 32]);

impl Seed {
    /// Parses up to 64 hex digits. Shorter strings are left-padded with zeros
    /// so that `--seed 2a` works.
    pub fn from_hex(s: &str) -> Result<Self, RandomnessError> {
        let s = s.trim().trim_start_matches("0x");
        if s.is_empty() || s.len() > 64 || !s.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(RandomnessError::BadSeed(s.to_string()));
        }
        let padded = format!("{s:0>64}");
        let mut out = [0u8; 32];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&padded[2 * i..2 * i + 2], 16)
                .map_err(|_| RandomnessError::BadSeed(s.to_string()))?;
        }
        Ok(Seed(out))
    }

    pub fn from_u64(v: u64) -> Self {
        let mut out = [0u8; 32];
        out[24..].copy_from_slice(&v.to_be_bytes());
        Seed(out)
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl std::fmt::Debug for Seed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Seed({})", self.to_hex())
    }
}

/// Random access to the 64-bit words of a keyed ChaCha20 stream.
#[derive(Clone)]
pub struct KeyStream {
    rng: ChaCha20Rng,
    // index of the word the rng will emit next
    next_index: u64,
}

impl KeyStream {
    pub fn new(seed: Seed) -> Self {
        Self {
            rng: ChaCha20Rng::from_seed(seed.0),
            next_index: 0,
        }
    }

    /// Word `index` of the stream. Sequential access avoids reseeking.
    #[inline]
    pub fn word(&mut self, index: u64) -> u64 {
        if index != self.next_index {
            self.rng.set_word_pos(2 * index as u128);
        }
        self.next_index = index + 1;
        self.rng.next_u64()
    }
}

/// Deterministic bit supply. Single owner; fork for independent consumers.
#[derive(Clone)]
pub struct BitSource {
    seed: Seed,
    stream: KeyStream,
    counter: u64,
}

impl BitSource {
    pub fn new(seed: Seed) -> Self {
        Self {
            seed,
            stream: KeyStream::new(seed),
            counter: 0,
        }
    }

    pub fn from_u64(v: u64) -> Self {
        Self::new(Seed::from_u64(v))
    }

    pub fn seed(&self) -> Seed {
        self.seed
    }

    /// Total bits drawn so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_bits(&mut self, n: usize) -> BitString {
        let mut words = Vec::with_capacity(n.div_ceil(64));
        let mut remaining = n;
        while remaining > 0 {
            let take = remaining.min(64);
            words.push(self.take(take as u32));
            remaining -= take;
        }
        BitString::from_words(words, n)
    }

    /// Next 64 bits as an integer.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.take(64)
    }

    /// Uniform in `[0, 1)` from one 64-bit draw (top 53 bits).
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[0, bound)`, one 64-bit draw, multiply-shift reduction.
    #[inline]
    pub fn next_below(&mut self, bound: u64) -> u64 {
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }

    /// True with probability `p`. Always consumes exactly 64 bits: the draw is
    /// compared against `floor(p * 2^64)`.
    pub fn bernoulli(&mut self, p: f64) -> Result<bool, RandomnessError> {
        let threshold = bernoulli_threshold(p)?;
        Ok((self.next_u64() as u128) < threshold)
    }

    /// Number of failures before the first success of a Bernoulli(p) trial
    /// sequence; one 64-bit draw. `p = 0` yields `u64::MAX`.
    pub fn geometric(&mut self, p: f64) -> u64 {
        let u = self.next_f64();
        if p <= 0.0 {
            return u64::MAX;
        }
        if p >= 1.0 {
            return 0;
        }
        // 1 - u in (0, 1]
        let k = ((1.0 - u).ln() / (-p).ln_1p()).floor();
        if k >= u64::MAX as f64 {
            u64::MAX
        } else {
            k as u64
        }
    }

    /// Child source keyed by `SHA-256(seed || label)`. The parent is untouched.
    pub fn fork(&self, label: &[u8]) -> Result<BitSource, RandomnessError> {
        if label.is_empty() {
            return Err(RandomnessError::EmptyLabel);
        }
        let mut h = Sha256::new();
        h.update(self.seed.0);
        h.update(b"/fork/");
        h.update(label);
        let digest = h.finalize();
        let mut child = [0u8; 32];
        child.copy_from_slice(&digest);
        Ok(BitSource::new(Seed(child)))
    }

    pub fn fork_str(&self, label: &str) -> BitSource {
        self.fork(label.as_bytes())
            .expect("static fork labels are non-empty")
    }

    fn take(&mut self, n: u32) -> u64 {
        debug_assert!((1..=64).contains(&n));
        let word = self.counter / 64;
        let shift = (self.counter % 64) as u32;
        let lo = self.stream.word(word) >> shift;
        let mut v = if shift + n <= 64 {
            lo
        } else {
            lo | (self.stream.word(word + 1) << (64 - shift))
        };
        if n < 64 {
            v &= (1u64 << n) - 1;
        }
        self.counter += n as u64;
        v
    }
}

/// Lets `rand_distr` distributions draw from the bit stream.
impl RngCore for BitSource {
    fn next_u32(&mut self) -> u32 {
        self.take(32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.take(64)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let w = self.take(64).to_le_bytes();
            chunk.copy_from_slice(&w[..chunk.len()]);
        }
    }
}

pub(crate) fn bernoulli_threshold(p: f64) -> Result<u128, RandomnessError> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(RandomnessError::Probability(p));
    }
    if p == 1.0 {
        return Ok(1u128 << 64);
    }
    Ok((p * 18_446_744_073_709_551_616.0).floor() as u128)
}
